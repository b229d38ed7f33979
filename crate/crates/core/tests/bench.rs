//! Manual timing probes (run with --ignored --nocapture). Not part of the
//! regular suite; used to size desk-scale configurations.

use mrfkit::acquisition::AcquisitionOperator;
use mrfkit::dataset::{build_dataset, DatasetConfig};
use mrfkit::dictionary::{build_dictionary, GridSpec};
use mrfkit::epg::default_flip_schedule;
use mrfkit::masks::{make_mask, MaskPattern};
use mrfkit::subspace::fit_basis;
use mrfkit::surrogate::{train_surrogate, SurrogateConfig};
use mrfkit::train::{train, TrainConfig, TrainMode};
use std::sync::Arc;
use std::time::Instant;

#[test]
#[ignore]
fn timing_probe() {
    let t0 = Instant::now();
    let sched = default_flip_schedule();
    let dict = build_dictionary::<f64>(&sched, &GridSpec::default(), 32).unwrap();
    println!("dictionary 60x50 T=200 states=32: {:.2?}", t0.elapsed());

    let t0 = Instant::now();
    let basis = fit_basis(&dict, 10).unwrap();
    println!("basis fit (gram + jacobi 200x200): {:.2?}", t0.elapsed());
    let dict_c = dict.compressed(&basis).unwrap();

    let t0 = Instant::now();
    let mask = make_mask(MaskPattern::Spiral, 64, 64, 63, 200).unwrap();
    println!("spiral mask 200 frames: {:.2?}", t0.elapsed());
    let op = Arc::new(AcquisitionOperator::new(mask, basis.clone()).unwrap());

    let t0 = Instant::now();
    let defect = op.adjoint_defect(100, 1);
    println!("adjoint test 100 pairs: {:.2?} (defect {defect:.2e})", t0.elapsed());

    let t0 = Instant::now();
    let cfg = DatasetConfig {
        n_train: 4,
        n_test: 1,
        ..Default::default()
    };
    let ds = build_dataset(&cfg, &sched, &basis, &op).unwrap();
    println!("dataset 5 slices 64x64: {:.2?}", t0.elapsed());

    for hidden in [128usize, 300] {
        let t0 = Instant::now();
        let scfg = SurrogateConfig {
            hidden,
            epochs: 20,
            lr: 1e-3,
            seed: 0,
        };
        let (_sur, rms) = train_surrogate(&dict_c, &scfg).unwrap();
        println!(
            "surrogate hidden={hidden}: 20 epochs in {:.2?} ({:.1?}/epoch), rms {rms:.3}",
            t0.elapsed(),
            t0.elapsed() / 20
        );
    }

    let (sur, _) = train_surrogate(
        &dict_c,
        &SurrogateConfig {
            hidden: 128,
            epochs: 100,
            lr: 1e-3,
            seed: 0,
        },
    )
    .unwrap();

    for (mode, name, sur_opt) in [
        (TrainMode::Supervised, "supervised", None),
        (TrainMode::Ei, "ei", None),
        (TrainMode::Nlei, "nlei", Some(&sur)),
    ] {
        let ds2 = if mode == TrainMode::Supervised {
            let cfg2 = DatasetConfig {
                n_train: 4,
                n_test: 1,
                keep_train_ground_truth: true,
                ..Default::default()
            };
            build_dataset(&cfg2, &sched, &basis, &op).unwrap()
        } else {
            ds.clone()
        };
        let t0 = Instant::now();
        let tc = TrainConfig {
            alpha: 1e-6,
            epochs: 2,
            ..TrainConfig::full_scale(mode, 1e-6, 0)
        };
        let _out = train(&ds2, &tc, sur_opt, &op).unwrap();
        // 2 epochs x 2 steps (4 slices, batch 2) = 4 steps
        println!("{name}: 4 steps in {:.2?} ({:.2?}/step)", t0.elapsed(), t0.elapsed() / 4);
    }
}
