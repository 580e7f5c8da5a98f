use proptest::prelude::*;

use ratex_core::calibration::equalize_with_record;
use ratex_core::cdtf::{self, apply_cdtf, CdtfModel};
use ratex_core::codec::{embed, embed_with, layout_grid, BitMessage, RatexMode};
use ratex_core::harness::{self, message_for, synthetic_carrier, ExperimentConfig};
use ratex_core::image::{read_image, write_image};
use ratex_core::recovery::{
    recover_hidden_ratex, recover_naive, recover_oorc, recover_two_step, Method,
};
use ratex_core::svm::TrainOptions;
use ratex_core::Histogram;

#[test]
fn frames_survive_disk_and_decode_at_an_oblique_view() {
    let dir = tempfile::tempdir().unwrap();
    let carrier = synthetic_carrier(7, 512, 512);
    let layout = layout_grid(512, 512, 8, 8, 5, 0.1).unwrap();
    let msg = message_for(42, 0, 0, layout.message_len());
    let pair = embed(&carrier, &msg, 3.0, &layout).unwrap();
    let m = cdtf::preset("d2c2").unwrap().with_angle(45.0);
    let paths = [dir.path().join("o.pgm"), dir.path().join("e.pgm")];
    write_image(&apply_cdtf(&pair.original, &m.with_seed(1)), &paths[0]).unwrap();
    write_image(&apply_cdtf(&pair.embedded, &m.with_seed(2)), &paths[1]).unwrap();
    let (o, e) = (
        read_image(&paths[0]).unwrap(),
        read_image(&paths[1]).unwrap(),
    );

    let opts = TrainOptions::default();
    let oorc = recover_oorc(&o, &e, &layout, &opts)
        .unwrap()
        .with_truth(&msg);
    let two = recover_two_step(&o, &e, &layout, &opts)
        .unwrap()
        .with_truth(&msg);
    let naive = recover_naive(&o, &e, &layout, 2.5)
        .unwrap()
        .with_truth(&msg);
    assert!(oorc.accuracy.unwrap() >= 0.95, "{:?}", oorc.accuracy);
    assert!(two.accuracy.unwrap() >= naive.accuracy.unwrap());
    assert!(
        naive.accuracy.unwrap() < 0.8,
        "attenuated differences should defeat the fixed threshold"
    );
}

#[test]
fn hidden_ratex_tracks_the_visible_methods() {
    let carrier = synthetic_carrier(8, 512, 512);
    let layout = layout_grid(512, 512, 8, 8, 5, 0.1).unwrap();
    let (eq, reference) = equalize_with_record(&carrier).unwrap();
    let msg = message_for(3, 0, 0, layout.message_len());
    let pair = embed_with(&eq, &msg, 3.0, &layout, RatexMode::Hidden).unwrap();
    let m = cdtf::preset("d1c1").unwrap().with_angle(45.0);
    let o = apply_cdtf(&pair.original, &m.with_seed(5));
    let e = apply_cdtf(&pair.embedded, &m.with_seed(6));
    let hidden = recover_hidden_ratex(&o, &e, &layout, &reference, 1.5)
        .unwrap()
        .with_truth(&msg);
    let naive = recover_naive(&o, &e, &layout, 2.5)
        .unwrap()
        .with_truth(&msg);
    assert!(hidden.accuracy.unwrap() >= 0.95, "{:?}", hidden.accuracy);
    assert!(hidden.accuracy.unwrap() >= naive.accuracy.unwrap());
    // A flat reference is a usable stand-in for an equalized frame.
    let flat = recover_hidden_ratex(&o, &e, &layout, &Histogram::uniform(), 1.5)
        .unwrap()
        .with_truth(&msg);
    assert!(flat.accuracy.unwrap() >= 0.9, "{:?}", flat.accuracy);
}

fn small_config() -> ExperimentConfig {
    let text = format!(
        r#"{{
            "version": 1,
            "carriers": ["synthetic:0", "synthetic:1"],
            "synthetic_size": [256, 256],
            "grid": {{ "rows": 8, "cols": 8, "ratex_count": 5 }},
            "kappas": [3, 5],
            "angles": [0, 45],
            "presets": ["d1c2", "d3c3"],
            "messages_per_carrier": 2,
            "seed": 77,
            "methods": {}
        }}"#,
        serde_json::to_string(&Method::ALL).unwrap()
    );
    ExperimentConfig::from_json(&text).unwrap()
}

#[test]
fn a_cell_rerun_alone_matches_the_sweep() {
    let cfg = small_config();
    let full = harness::run_experiment(&cfg).unwrap();
    let mut one = cfg.clone();
    one.presets = vec!["d3c3".into()];
    one.angles = vec![45.0];
    one.kappas = vec![3.0];
    let alone = harness::run_experiment(&one).unwrap();
    for r in &alone.rows {
        let same = full
            .rows
            .iter()
            .find(|f| {
                f.preset == r.preset
                    && f.angle_deg == r.angle_deg
                    && f.kappa == r.kappa
                    && f.method == r.method
            })
            .unwrap();
        assert_eq!(
            (same.bits_correct, same.bits_total),
            (r.bits_correct, r.bits_total)
        );
    }
}

#[test]
fn report_files_are_replaced_whole() {
    let dir = tempfile::tempdir().unwrap();
    let report = harness::run_experiment(&small_config()).unwrap();
    harness::write_report(&report, dir.path()).unwrap();
    harness::write_report(&report, dir.path()).unwrap();
    let names: Vec<String> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    let mut sorted = names.clone();
    sorted.sort();
    assert_eq!(
        sorted,
        ["report.csv", "report.json"],
        "no temporary files left behind"
    );
    let csv = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert!(csv
        .starts_with("preset,angle_deg,kappa,method,bits_total,bits_correct,accuracy,failures\n"));
    assert_eq!(csv.lines().count(), 1 + report.rows.len());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn identity_channel_is_lossless_for_any_message(bits in proptest::collection::vec(any::<bool>(), 59), kappa in 1.0f64..20.0) {
        let carrier = synthetic_carrier(1, 256, 256);
        let layout = layout_grid(256, 256, 8, 8, 5, 0.1).unwrap();
        let msg = BitMessage::new(bits);
        let pair = embed(&carrier, &msg, kappa.round(), &layout).unwrap();
        let id = CdtfModel::identity();
        let (o, e) = (apply_cdtf(&pair.original, &id), apply_cdtf(&pair.embedded, &id));
        let r = recover_naive(&o, &e, &layout, 0.0).unwrap();
        // Bits lost to clipping at white are the only allowed errors.
        for (k, b) in layout.message_blocks().enumerate() {
            if !pair.saturated_blocks.contains(&b) {
                prop_assert_eq!(r.bits.bits()[k], msg.bits()[k]);
            }
        }
    }
}
