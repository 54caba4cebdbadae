//! Acceptance suite: one test per criterion, each printing a pass line with
//! the measured values. Property criteria run against independent oracles
//! implemented in this file; the directional criteria train matched models
//! on one fixed synthetic dataset (200 train / 50 test, 8 classes,
//! power-law exponent 2, seed 42) shared across tests.
//!
//! Run with `cargo test -p regseg-cli --test acceptance -- --nocapture`.

use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use regseg_core::dataset::{synthesize_dataset, Dataset};
use regseg_core::losses::{
    class_weights, pixel_loss, pixel_loss_partitioned, ClassWeights, LossMode,
};
use regseg_core::metrics;
use regseg_core::partition::build_loss_partition;
use regseg_core::r2p::{r2p_backward, r2p_forward, RegionScores, NO_REGION, UNCOVERED_SCORE};
use regseg_core::regions::{
    grid_proposals, ground_truth_regions, LabelMap, RegionMask, RegionSet, RegionSource, VOID,
};
use regseg_core::roipool::{
    bbox_roi_pool, freeform_roi_pool_backward, freeform_roi_pool_forward, rasterize_mask,
};
use regseg_core::synth::{synthesize, SceneSpec};
use regseg_core::tensor::Tensor;
use regseg_core::trainer::{evaluate, train, OversegParams, ProposalConfig, TrainConfig};
use regseg_core::verify;
use regseg_core::{Architecture, FusionMode, ModelConfig};

// --- shared dataset and trained-model fixture -----------------------------

fn acceptance_dataset() -> &'static Dataset {
    static DATASET: OnceLock<Dataset> = OnceLock::new();
    DATASET.get_or_init(|| {
        let spec = SceneSpec::new(32, 32, 8, 42).expect("spec");
        synthesize_dataset(&spec, 200, 50).expect("dataset")
    })
}

#[derive(Clone, Copy, Debug)]
struct Scores {
    global: f64,
    class_avg: f64,
}

struct Fixture {
    e2e_box_unbal: Scores,
    baseline_unbal: Scores,
    box_bal: Scores,
    region_bal: Scores,
    tied_bal: Scores,
    separate_bal: Scores,
    separate_bal_overseg: Scores,
    separate_unbal: Scores,
    majority_class_avg: f64,
}

fn grid_cfg() -> ProposalConfig {
    ProposalConfig::default_grid()
}

fn overseg_cfg() -> ProposalConfig {
    ProposalConfig::Oversegmentation(OversegParams::default())
}

fn train_and_score(config: ModelConfig, proposal_cfg: ProposalConfig) -> Scores {
    let data = acceptance_dataset();
    let tcfg = TrainConfig {
        seed: 42,
        ..TrainConfig::default()
    };
    let out = train(&config, &tcfg, &proposal_cfg, data).expect("training");
    assert!(!out.diverged, "training diverged for {:?}", config);
    let (cm, _) = evaluate(&out.state, data, &data.test_indices, &proposal_cfg).expect("eval");
    Scores {
        global: metrics::global_accuracy(&cm).expect("global"),
        class_avg: metrics::class_average_accuracy(&cm).expect("class avg"),
    }
}

fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let data = acceptance_dataset();

        let mut e2e_box_unbal = ModelConfig::end_to_end(8);
        e2e_box_unbal.fusion = FusionMode::BoxOnly;
        e2e_box_unbal.loss_mode = LossMode::Unbalanced;

        let mut baseline_unbal = ModelConfig::baseline(8);
        baseline_unbal.loss_mode = LossMode::Unbalanced;

        let with_fusion = |fusion: FusionMode| {
            let mut c = ModelConfig::end_to_end(8);
            c.fusion = fusion;
            c
        };
        let mut separate_unbal = with_fusion(FusionMode::Separate);
        separate_unbal.loss_mode = LossMode::Unbalanced;

        // eight trainings, one thread each
        let jobs: Vec<(ModelConfig, ProposalConfig)> = vec![
            (e2e_box_unbal, grid_cfg()),
            (baseline_unbal, grid_cfg()),
            (with_fusion(FusionMode::BoxOnly), grid_cfg()),
            (with_fusion(FusionMode::RegionOnly), grid_cfg()),
            (with_fusion(FusionMode::Tied), grid_cfg()),
            (with_fusion(FusionMode::Separate), grid_cfg()),
            (with_fusion(FusionMode::Separate), overseg_cfg()),
            (separate_unbal, grid_cfg()),
        ];
        let handles: Vec<_> = jobs
            .into_iter()
            .map(|(config, pcfg)| std::thread::spawn(move || train_and_score(config, pcfg)))
            .collect();
        let mut scores: Vec<Scores> = handles
            .into_iter()
            .map(|h| h.join().expect("training thread"))
            .collect();
        let separate_unbal = scores.pop().unwrap();
        let separate_bal_overseg = scores.pop().unwrap();
        let separate_bal = scores.pop().unwrap();
        let tied_bal = scores.pop().unwrap();
        let region_bal = scores.pop().unwrap();
        let box_bal = scores.pop().unwrap();
        let baseline_unbal = scores.pop().unwrap();
        let e2e_box_unbal = scores.pop().unwrap();

        // constant predictor of the most frequent training class
        let mut counts = vec![0usize; 8];
        for &i in &data.train_indices {
            for (c, n) in data.labels[i].class_counts(8).iter().enumerate() {
                counts[c] += n;
            }
        }
        let majority = (0..8).max_by_key(|&c| counts[c]).unwrap() as u8;
        let mut cm = metrics::ConfusionMatrix::new(8);
        for &i in &data.test_indices {
            let constant = LabelMap::new(32, 32, majority);
            cm.accumulate(&data.labels[i], &constant).unwrap();
        }
        let majority_class_avg = metrics::class_average_accuracy(&cm).unwrap();

        Fixture {
            e2e_box_unbal,
            baseline_unbal,
            box_bal,
            region_bal,
            tied_bal,
            separate_bal,
            separate_bal_overseg,
            separate_unbal,
            majority_class_avg,
        }
    })
}

// --- criterion 1: gradient exactness --------------------------------------

#[test]
fn criterion_01_gradient_exactness() {
    let start = Instant::now();
    let layer_checks = verify::layer_checks(42).expect("layer checks");
    for check in &layer_checks {
        assert!(
            check.report.max_rel_err < 1e-6 && check.report.checked > 0,
            "layer check {} failed: err {}",
            check.name,
            check.report.max_rel_err
        );
    }
    let model_checks = verify::model_checks(42, 12).expect("model checks");
    let mut worst: f64 = 0.0;
    for check in &model_checks {
        assert!(
            check.report.max_rel_err < 1e-4 && check.report.checked > 0,
            "model check {} failed: err {}",
            check.name,
            check.report.max_rel_err
        );
        worst = worst.max(check.report.max_rel_err);
    }
    let elapsed = start.elapsed();
    assert!(
        elapsed.as_secs() < 120,
        "gradient checks took {:?}, budget is 2 minutes",
        elapsed
    );
    println!(
        "criterion 1 PASS: {} layer checks < 1e-6, {} whole-model checks < 1e-4 (worst {:.2e}) in {:?}",
        layer_checks.len(),
        model_checks.len(),
        worst,
        elapsed
    );
}

// --- criterion 2: region-to-pixel oracle -----------------------------------

fn random_region_instance(
    rng: &mut ChaCha8Rng,
    w: usize,
    h: usize,
    num_regions: usize,
    num_classes: usize,
) -> (RegionSet, RegionScores) {
    let mut regions = Vec::with_capacity(num_regions);
    for _ in 0..num_regions {
        if rng.gen_bool(0.7) {
            let x0 = rng.gen_range(0..w);
            let y0 = rng.gen_range(0..h);
            let x1 = rng.gen_range(x0..w);
            let y1 = rng.gen_range(y0..h);
            regions.push(RegionMask::rect(x0, y0, x1, y1, w));
        } else {
            // free-form: random pixel subset
            let pixels: Vec<u32> = (0..(w * h) as u32).filter(|_| rng.gen_bool(0.2)).collect();
            if pixels.is_empty() {
                regions.push(RegionMask::rect(0, 0, 0, 0, w));
            } else {
                regions.push(RegionMask::new(pixels, w, h).unwrap());
            }
        }
    }
    let scores = Tensor::rand_uniform(&[num_regions, num_classes], -3.0, 3.0, rng);
    (
        RegionSet {
            regions,
            source: RegionSource::Mixed,
            width: w,
            height: h,
        },
        RegionScores::new(scores).unwrap(),
    )
}

#[test]
fn criterion_02_region_to_pixel_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (w, h, c) = (16, 16, 5);
    for instance in 0..100 {
        let (set, scores) = random_region_instance(&mut rng, w, h, 20, c);
        let pix = r2p_forward(&scores, &set).unwrap();

        // brute-force forward: scan every region per (pixel, class)
        for p in 0..(w * h) as u32 {
            for class in 0..c {
                let mut best = UNCOVERED_SCORE;
                let mut winner = NO_REGION;
                for (rid, region) in set.regions.iter().enumerate() {
                    if region.contains(p) {
                        let v = scores.scores.at2(rid, class);
                        if winner == NO_REGION || v > best {
                            best = v;
                            winner = rid as i32;
                        }
                    }
                }
                let slot = p as usize * c + class;
                assert_eq!(pix.winner[slot], winner, "instance {}", instance);
                assert_eq!(pix.scores.data()[slot], best, "instance {}", instance);
            }
        }

        // brute-force backward: per-(pixel, class) gradient summed into the
        // winning region row
        let pix_grad = Tensor::rand_uniform(&[w * h, c], -1.0, 1.0, &mut rng);
        let grad = r2p_backward(&pix_grad, &pix.winner, set.len()).unwrap();
        let mut expect = Tensor::zeros(&[set.len(), c]);
        for p in 0..w * h {
            for class in 0..c {
                let win = pix.winner[p * c + class];
                if win != NO_REGION {
                    let idx = win as usize * c + class;
                    expect.data_mut()[idx] += pix_grad.at2(p, class);
                }
            }
        }
        assert_eq!(grad.data(), expect.data(), "instance {}", instance);
    }
    println!("criterion 2 PASS: r2p forward/backward equal brute force on 100 instances (exact)");
}

// --- criterion 3: pooling oracles ------------------------------------------

#[test]
fn criterion_03_pooling_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for instance in 0..100 {
        let fm = 8;
        let depth = 3;
        let convmap = Tensor::rand_uniform(&[fm, fm, depth], -2.0, 2.0, &mut rng);
        let pixels: Vec<u32> = (0..256u32).filter(|_| rng.gen_bool(0.3)).collect();
        let pixels = if pixels.is_empty() { vec![0] } else { pixels };
        let region = RegionMask::new(pixels, 16, 16).unwrap();
        let mask = rasterize_mask(&region, 16, 16, fm, fm).unwrap();
        let (out_h, out_w) = (3, 3);
        let roi = freeform_roi_pool_forward(&convmap, &mask, out_h, out_w).unwrap();

        // brute-force per-bin max over in-mask cells
        let b = mask.bbox_fm();
        for i in 0..out_h {
            for j in 0..out_w {
                let y0 = b.y0 + i * b.height() / out_h;
                let y1 = b.y0 + ((i + 1) * b.height() + out_h - 1) / out_h;
                let x0 = b.x0 + j * b.width() / out_w;
                let x1 = b.x0 + ((j + 1) * b.width() + out_w - 1) / out_w;
                for d in 0..depth {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_cell = -1i32;
                    for fy in y0..y1 {
                        for fx in x0..x1 {
                            let cell = fy * fm + fx;
                            if mask.contains(cell) {
                                let v = convmap.at3(fy, fx, d);
                                if best_cell < 0 || v > best {
                                    best = v;
                                    best_cell = cell as i32;
                                }
                            }
                        }
                    }
                    let slot = (i * out_w + j) * depth + d;
                    assert_eq!(roi.argmax[slot], best_cell, "instance {}", instance);
                    if best_cell >= 0 {
                        assert_eq!(roi.values.data()[slot], best, "instance {}", instance);
                        // output equals the convmap at the stored winner
                        let (fy, fx) = (best_cell as usize / fm, best_cell as usize % fm);
                        assert_eq!(roi.values.data()[slot], convmap.at3(fy, fx, d));
                    } else {
                        assert_eq!(roi.values.data()[slot], 0.0);
                    }
                }
            }
        }

        // masking property: out-of-mask perturbations change nothing
        let mut poked = convmap.clone();
        for cell in 0..fm * fm {
            if !mask.contains(cell) {
                for d in 0..depth {
                    poked.data_mut()[cell * depth + d] = rng.gen_range(100.0..1000.0);
                }
            }
        }
        let roi_poked = freeform_roi_pool_forward(&poked, &mask, out_h, out_w).unwrap();
        assert_eq!(roi.values.data(), roi_poked.values.data(), "masking violated");
        assert_eq!(roi.argmax, roi_poked.argmax);

        // backward mass conservation per channel
        let grad_out = Tensor::rand_uniform(&[out_h, out_w, depth], -1.0, 1.0, &mut rng);
        let grad = freeform_roi_pool_backward(&roi, &grad_out, &[fm, fm, depth]).unwrap();
        for d in 0..depth {
            let sum_in: f64 = (0..fm * fm).map(|cell| grad.data()[cell * depth + d]).sum();
            let sum_out: f64 = (0..out_h * out_w)
                .filter(|&slot| roi.argmax[slot * depth + d] >= 0)
                .map(|slot| grad_out.data()[slot * depth + d])
                .sum();
            assert!((sum_in - sum_out).abs() < 1e-12, "mass leak instance {}", instance);
        }

        // bbox pooling is free-form pooling under the full-box mask
        let boxed = bbox_roi_pool(&convmap, b, out_h, out_w).unwrap();
        let full = regseg_core::ConvRegionMask::full_box(b, fm, fm);
        let full_pool = freeform_roi_pool_forward(&convmap, &full, out_h, out_w).unwrap();
        assert_eq!(boxed.values.data(), full_pool.values.data());
        assert_eq!(boxed.argmax, full_pool.argmax);
    }
    println!("criterion 3 PASS: pooling oracle, masking property, mass conservation on 100 instances");
}

// --- criterion 4: loss equivalence and speedup ------------------------------

fn random_covered_instance(rng: &mut ChaCha8Rng) -> (RegionSet, LabelMap, RegionScores) {
    let (w, h) = (16, 16);
    let mut gt = LabelMap::new(w, h, 0);
    for p in 0..w * h {
        let v = rng.gen_range(0..6);
        gt.labels_mut()[p] = if v == 5 { VOID } else { v };
    }
    if gt.non_void_count() == 0 {
        gt.labels_mut()[0] = 0;
    }
    let proposals = grid_proposals(w, h, &[4, 8, 16], 0.5).unwrap();
    let set = proposals.union(&ground_truth_regions(&gt));
    let scores = Tensor::rand_uniform(&[set.len(), 5], -2.0, 2.0, rng);
    (set, gt, RegionScores::new(scores).unwrap())
}

#[test]
fn criterion_04_loss_equivalence_and_speedup() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    // equivalence on 50 random instances, both weightings
    for instance in 0..50 {
        let (set, gt, scores) = random_covered_instance(&mut rng);
        let partition = build_loss_partition(&set, &gt);
        for mode in [LossMode::Balanced, LossMode::Unbalanced] {
            let w = class_weights(&gt, 5, mode).unwrap();
            let fast = pixel_loss_partitioned(&scores, &set, &partition, &w).unwrap();
            let pix = r2p_forward(&scores, &set).unwrap();
            let naive = pixel_loss(&pix, &gt, &w).unwrap();
            let naive_grad = r2p_backward(&naive.grad, &pix.winner, set.len()).unwrap();
            assert!(
                (fast.value - naive.value).abs() <= 1e-10,
                "instance {} value: {} vs {}",
                instance,
                fast.value,
                naive.value
            );
            for i in 0..fast.grad.len() {
                assert!(
                    (fast.grad.data()[i] - naive_grad.data()[i]).abs() <= 1e-10,
                    "instance {} grad[{}]",
                    instance,
                    i
                );
            }
        }
    }

    // timing on 64x64 with a dense proposal set (>= 200 proposals)
    let spec = SceneSpec::new(64, 64, 8, 4).unwrap();
    let (_, gt) = synthesize(&spec, 0).unwrap();
    let proposals = grid_proposals(64, 64, &[8, 16, 32], 0.5).unwrap();
    assert!(proposals.len() >= 200, "need >= 200 proposals, got {}", proposals.len());
    let set = proposals.union(&ground_truth_regions(&gt));
    let partition = build_loss_partition(&set, &gt);
    let w = class_weights(&gt, 8, LossMode::Balanced).unwrap();
    let scores = RegionScores::new(Tensor::rand_uniform(
        &[set.len(), 8],
        -2.0,
        2.0,
        &mut rng,
    ))
    .unwrap();

    let time_min = |f: &mut dyn FnMut()| -> f64 {
        let mut best = f64::INFINITY;
        for _ in 0..15 {
            let t = Instant::now();
            f();
            best = best.min(t.elapsed().as_secs_f64());
        }
        best
    };
    let naive_time = time_min(&mut || {
        let pix = r2p_forward(&scores, &set).unwrap();
        let loss = pixel_loss(&pix, &gt, &w).unwrap();
        let grad = r2p_backward(&loss.grad, &pix.winner, set.len()).unwrap();
        std::hint::black_box((loss.value, grad));
    });
    let fast_time = time_min(&mut || {
        let loss = pixel_loss_partitioned(&scores, &set, &partition, &w).unwrap();
        std::hint::black_box((loss.value, loss.grad));
    });
    let speedup = naive_time / fast_time;
    assert!(
        speedup >= 10.0,
        "partitioned path only {:.1}x faster ({:.1}us vs {:.1}us)",
        speedup,
        fast_time * 1e6,
        naive_time * 1e6
    );
    println!(
        "criterion 4 PASS: partitioned == naive within 1e-10 on 50 instances; speedup {:.1}x ({} proposals, {} cells)",
        speedup,
        set.len(),
        partition.cells.len()
    );
}

// --- criterion 5: balanced-weight identity ----------------------------------

#[test]
fn criterion_05_balanced_weight_identity() {
    let data = acceptance_dataset();
    let mut worst: f64 = 0.0;
    for (i, gt) in data.labels.iter().enumerate() {
        for mode in [LossMode::Balanced, LossMode::Unbalanced] {
            let w: ClassWeights = class_weights(gt, 8, mode).unwrap();
            let sum = w.weighted_count_sum(gt);
            let err = (sum - 1.0).abs();
            assert!(err <= 1e-10, "image {}: sum {} (mode {:?})", i, sum, mode);
            worst = worst.max(err);
        }
    }
    println!(
        "criterion 5 PASS: weight identity holds on all {} images (worst |sum-1| = {:.2e})",
        data.labels.len(),
        worst
    );
}

// --- criteria 6-9: directional desk-scale replications ----------------------

#[test]
fn criterion_06_end_to_end_beats_baseline() {
    let fx = fixture();
    let margin = fx.e2e_box_unbal.global - fx.baseline_unbal.global;
    assert!(
        margin >= 0.02,
        "end-to-end global {:.4} vs baseline {:.4}: margin {:.4} < 2 points",
        fx.e2e_box_unbal.global,
        fx.baseline_unbal.global,
        margin
    );
    println!(
        "criterion 6 PASS: end-to-end global {:.4} vs baseline {:.4} (margin {:+.1} points)",
        fx.e2e_box_unbal.global,
        fx.baseline_unbal.global,
        margin * 100.0
    );
}

#[test]
fn criterion_07_pooling_representation_ordering() {
    let fx = fixture();
    let slack = 0.005;
    let singles = fx.region_bal.class_avg.max(fx.box_bal.class_avg);
    assert!(
        fx.separate_bal.class_avg >= fx.tied_bal.class_avg - slack,
        "separate {:.4} < tied {:.4} - 0.5pt",
        fx.separate_bal.class_avg,
        fx.tied_bal.class_avg
    );
    assert!(
        fx.tied_bal.class_avg >= singles - slack,
        "tied {:.4} < max(region {:.4}, box {:.4}) - 0.5pt",
        fx.tied_bal.class_avg,
        fx.region_bal.class_avg,
        fx.box_bal.class_avg
    );
    println!(
        "criterion 7 PASS: class-avg box {:.4} region {:.4} tied {:.4} separate {:.4}",
        fx.box_bal.class_avg,
        fx.region_bal.class_avg,
        fx.tied_bal.class_avg,
        fx.separate_bal.class_avg
    );
}

#[test]
fn criterion_08_multi_scale_beats_oversegmentation() {
    let fx = fixture();
    let margin = fx.separate_bal.class_avg - fx.separate_bal_overseg.class_avg;
    assert!(
        margin >= 0.02,
        "multi-scale {:.4} vs overseg {:.4}: margin {:.4} < 2 points",
        fx.separate_bal.class_avg,
        fx.separate_bal_overseg.class_avg,
        margin
    );
    println!(
        "criterion 8 PASS: multi-scale class-avg {:.4} vs oversegmentation {:.4} ({:+.1} points)",
        fx.separate_bal.class_avg,
        fx.separate_bal_overseg.class_avg,
        margin * 100.0
    );
}

#[test]
fn criterion_09_balanced_vs_unbalanced_tradeoff() {
    let fx = fixture();
    assert!(
        fx.separate_bal.class_avg > fx.separate_unbal.class_avg,
        "balanced class-avg {:.4} not above unbalanced {:.4}",
        fx.separate_bal.class_avg,
        fx.separate_unbal.class_avg
    );
    assert!(
        fx.separate_unbal.global >= fx.separate_bal.global,
        "unbalanced global {:.4} below balanced {:.4}",
        fx.separate_unbal.global,
        fx.separate_bal.global
    );
    println!(
        "criterion 9 PASS: balanced class-avg {:.4} > unbalanced {:.4}; unbalanced global {:.4} >= balanced {:.4}",
        fx.separate_bal.class_avg,
        fx.separate_unbal.class_avg,
        fx.separate_unbal.global,
        fx.separate_bal.global
    );
}

// --- criterion 10: boundary metric correctness -------------------------------

/// Definition-level oracle: midpoints of differing 4-neighbor pairs,
/// distance from pixel centers, band floor of half a pixel.
fn boundary_band_oracle(gt: &LabelMap, band: usize) -> Vec<bool> {
    let (w, h) = (gt.width(), gt.height());
    let mut midpoints = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let a = gt.get(x, y);
            if a == VOID {
                continue;
            }
            for (nx, ny) in [(x + 1, y), (x, y + 1)] {
                if nx < w && ny < h {
                    let b = gt.get(nx, ny);
                    if b != VOID && b != a {
                        midpoints.push((
                            (x as f64 + nx as f64 + 1.0) / 2.0,
                            (y as f64 + ny as f64 + 1.0) / 2.0,
                        ));
                    }
                }
            }
        }
    }
    let limit = (band as f64).max(0.5);
    (0..w * h)
        .map(|p| {
            if gt.at(p) == VOID || midpoints.is_empty() {
                return false;
            }
            let (cx, cy) = ((p % w) as f64 + 0.5, (p / w) as f64 + 0.5);
            midpoints
                .iter()
                .any(|&(ex, ey)| ((cx - ex).powi(2) + (cy - ey).powi(2)).sqrt() <= limit)
        })
        .collect()
}

#[test]
fn criterion_10_boundary_metric_correctness() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for instance in 0..20 {
        let mut gt = LabelMap::new(14, 14, 0);
        for p in 0..14 * 14 {
            let v = rng.gen_range(0..5);
            gt.labels_mut()[p] = if v == 4 { VOID } else { v };
        }
        for band in [0usize, 1, 2, 4, 7] {
            assert_eq!(
                metrics::boundary_band(&gt, band),
                boundary_band_oracle(&gt, band),
                "instance {} band {}",
                instance,
                band
            );
        }
        // a perfect prediction restricted to any non-empty band is exact
        if let Some(acc) = metrics::boundary_class_accuracy(&gt.clone(), &gt, 4).unwrap() {
            assert_eq!(acc, 1.0, "instance {}", instance);
        }
    }
    println!("criterion 10 PASS: boundary band equals brute-force distances on 20 maps; perfect prediction scores 1.0");
}

// --- criterion 11: byte-identical training replay ----------------------------

#[test]
fn criterion_11_training_replay_is_byte_identical() {
    let bin = env!("CARGO_BIN_EXE_regseg");
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path().join("data");
    let status = std::process::Command::new(bin)
        .args([
            "gen-data",
            "--out",
            data_dir.to_str().unwrap(),
            "--train-count",
            "8",
            "--test-count",
            "3",
            "--width",
            "24",
            "--height",
            "24",
            "--classes",
            "5",
            "--seed",
            "7",
        ])
        .status()
        .expect("gen-data run");
    assert!(status.success());

    let mut logs = Vec::new();
    for run in 0..2 {
        let out_dir = dir.path().join(format!("run{}", run));
        let status = std::process::Command::new(bin)
            .args([
                "train",
                "--data",
                data_dir.to_str().unwrap(),
                "--out",
                out_dir.to_str().unwrap(),
                "--epochs1",
                "3",
                "--epochs2",
                "1",
                "--seed",
                "11",
            ])
            .status()
            .expect("train run");
        assert!(status.success());
        logs.push((
            std::fs::read(out_dir.join("train.log")).unwrap(),
            std::fs::read(out_dir.join("checkpoint.bin")).unwrap(),
            std::fs::read(out_dir.join("run.cfg")).unwrap(),
        ));
    }
    assert_eq!(logs[0].0, logs[1].0, "training logs differ between replays");
    assert_eq!(logs[0].1, logs[1].1, "checkpoints differ between replays");
    assert_eq!(logs[0].2, logs[1].2, "config echoes differ between replays");
    println!(
        "criterion 11 PASS: two `train` replays produced byte-identical logs ({} bytes), checkpoints and config echoes",
        logs[0].0.len()
    );
}

// --- trainer margin example --------------------------------------------------

#[test]
fn trained_model_beats_majority_class_predictor_by_30_points() {
    let fx = fixture();
    let margin = fx.separate_bal.class_avg - fx.majority_class_avg;
    assert!(
        margin >= 0.30,
        "class-avg {:.4} vs majority predictor {:.4}: margin {:.4} < 30 points",
        fx.separate_bal.class_avg,
        fx.majority_class_avg,
        margin
    );
    println!(
        "trainer margin PASS: class-avg {:.4} vs majority-class predictor {:.4} ({:+.1} points)",
        fx.separate_bal.class_avg,
        fx.majority_class_avg,
        margin * 100.0
    );
}

// --- prediction-rule separation check ---------------------------------------

#[test]
fn baseline_arch_validation_is_enforced() {
    let mut config = ModelConfig::baseline(4);
    config.fusion = FusionMode::Tied;
    assert!(config.validate().is_err());
    assert_eq!(ModelConfig::baseline(4).arch, Architecture::Baseline);
}
