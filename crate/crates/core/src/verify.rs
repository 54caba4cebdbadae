//! Standard gradient-check battery: per-layer finite-difference checks for
//! every op with a backward pass, plus whole-model checks through the full
//! pipeline for both fusion strategies and both loss weightings.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::gradcheck::{check_gradient, GradReport, Probe, RoutingHash};
use crate::losses::{self, LossMode};
use crate::models::{
    self, BatchLoss, FusionMode, ModelConfig, ModelState, SoftmaxOrder,
};
use crate::ops;
use crate::partition::build_loss_partition;
use crate::r2p::{self, RegionScores};
use crate::regions::{grid_proposals, ground_truth_regions, RegionMask};
use crate::roipool;
use crate::synth::{synthesize, SceneSpec};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct NamedCheck {
    pub name: String,
    pub report: GradReport,
    pub tolerance: f64,
}

impl NamedCheck {
    pub fn passed(&self) -> bool {
        self.report.max_rel_err < self.tolerance && self.report.checked > 0
    }
}

pub const LAYER_TOLERANCE: f64 = 1e-6;
pub const MODEL_TOLERANCE: f64 = 1e-4;

fn weighted_sum(values: &Tensor, coeffs: &[f64]) -> f64 {
    values.data().iter().zip(coeffs).map(|(a, b)| a * b).sum()
}

/// Finite-difference checks for every individual layer, each against a
/// random instance drawn from `seed`.
pub fn layer_checks(seed: u64) -> Result<Vec<NamedCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();
    let mut push = |name: &str, report: GradReport| {
        checks.push(NamedCheck {
            name: name.to_string(),
            report,
            tolerance: LAYER_TOLERANCE,
        });
    };

    // conv2d: input and weights
    {
        let input = Tensor::rand_uniform(&[6, 6, 2], -1.0, 1.0, &mut rng);
        let weights = Tensor::rand_uniform(&[3, 3, 2, 3], -1.0, 1.0, &mut rng);
        let bias = Tensor::rand_uniform(&[3], -0.5, 0.5, &mut rng);
        let coeffs: Vec<f64> = (0..6 * 6 * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let out = ops::conv2d_forward(&input, &weights, &bias, 1, 1)?;
        let grad_out = Tensor::from_vec(out.shape(), coeffs.clone())?;
        let (gi, gw, gb) = ops::conv2d_backward(&input, &weights, &grad_out, 1, 1)?;
        push(
            "conv2d/input",
            check_gradient(
                |x| {
                    Probe::smooth(weighted_sum(
                        &ops::conv2d_forward(x, &weights, &bias, 1, 1).unwrap(),
                        &coeffs,
                    ))
                },
                &input,
                &gi,
                1e-5,
            ),
        );
        push(
            "conv2d/weights",
            check_gradient(
                |w| {
                    Probe::smooth(weighted_sum(
                        &ops::conv2d_forward(&input, w, &bias, 1, 1).unwrap(),
                        &coeffs,
                    ))
                },
                &weights,
                &gw,
                1e-5,
            ),
        );
        push(
            "conv2d/bias",
            check_gradient(
                |b| {
                    Probe::smooth(weighted_sum(
                        &ops::conv2d_forward(&input, &weights, b, 1, 1).unwrap(),
                        &coeffs,
                    ))
                },
                &bias,
                &gb,
                1e-5,
            ),
        );
    }

    // relu at a tie-free point
    {
        let mut input = Tensor::rand_uniform(&[32], -1.0, 1.0, &mut rng);
        for v in input.data_mut() {
            if v.abs() < 0.05 {
                *v += 0.1; // keep away from the kink
            }
        }
        let coeffs: Vec<f64> = (0..32).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let grad_out = Tensor::from_vec(&[32], coeffs.clone())?;
        let analytic = ops::relu_backward(&input, &grad_out)?;
        push(
            "relu",
            check_gradient(
                |x| Probe::smooth(weighted_sum(&ops::relu_forward(x), &coeffs)),
                &input,
                &analytic,
                1e-5,
            ),
        );
    }

    // maxpool2 with routing-aware probes
    {
        let input = Tensor::rand_uniform(&[4, 4, 2], -1.0, 1.0, &mut rng);
        let coeffs: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (out, argmax) = ops::maxpool2_forward(&input)?;
        let grad_out = Tensor::from_vec(out.shape(), coeffs.clone())?;
        let analytic = ops::maxpool2_backward(&argmax, &grad_out, input.shape())?;
        push(
            "maxpool2",
            check_gradient(
                |x| {
                    let (o, am) = ops::maxpool2_forward(x).unwrap();
                    let mut h = RoutingHash::new();
                    h.mix_slice_u32(&am);
                    Probe {
                        loss: weighted_sum(&o, &coeffs),
                        routing: h.finish(),
                    }
                },
                &input,
                &analytic,
                1e-5,
            ),
        );
    }

    // linear: input and weights
    {
        let input = Tensor::rand_uniform(&[6], -1.0, 1.0, &mut rng);
        let weights = Tensor::rand_uniform(&[6, 4], -1.0, 1.0, &mut rng);
        let bias = Tensor::rand_uniform(&[4], -0.5, 0.5, &mut rng);
        let coeffs: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let grad_out = Tensor::from_vec(&[4], coeffs.clone())?;
        let (gi, gw, _) = ops::linear_backward(&input, &weights, &grad_out)?;
        push(
            "linear/input",
            check_gradient(
                |x| {
                    Probe::smooth(weighted_sum(
                        &ops::linear_forward(x, &weights, &bias).unwrap(),
                        &coeffs,
                    ))
                },
                &input,
                &gi,
                1e-6,
            ),
        );
        push(
            "linear/weights",
            check_gradient(
                |w| {
                    Probe::smooth(weighted_sum(
                        &ops::linear_forward(&input, w, &bias).unwrap(),
                        &coeffs,
                    ))
                },
                &weights,
                &gw,
                1e-6,
            ),
        );
    }

    // softmax + log-loss
    {
        let input = Tensor::rand_uniform(&[5], -2.0, 2.0, &mut rng);
        let target = rng.gen_range(0..5);
        let mut analytic = ops::softmax(&input);
        analytic.data_mut()[target] -= 1.0;
        push(
            "softmax_log_loss",
            check_gradient(
                |x| {
                    let mut logp = vec![0.0; 5];
                    ops::log_softmax_slice(x.data(), &mut logp);
                    Probe::smooth(-logp[target])
                },
                &input,
                &analytic,
                1e-6,
            ),
        );
    }

    // free-form roi pooling
    {
        let convmap = Tensor::rand_uniform(&[8, 8, 2], -1.0, 1.0, &mut rng);
        let pixels: Vec<u32> = (0..256u32).filter(|_| rng.gen_bool(0.5)).collect();
        let region = RegionMask::new(pixels, 16, 16)?;
        let mask = roipool::rasterize_mask(&region, 16, 16, 8, 8)?;
        let coeffs: Vec<f64> = (0..3 * 3 * 2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let roi = roipool::freeform_roi_pool_forward(&convmap, &mask, 3, 3)?;
        let grad_out = Tensor::from_vec(&[3, 3, 2], coeffs.clone())?;
        let analytic = roipool::freeform_roi_pool_backward(&roi, &grad_out, &[8, 8, 2])?;
        push(
            "freeform_roi_pool",
            check_gradient(
                |x| {
                    let r = roipool::freeform_roi_pool_forward(x, &mask, 3, 3).unwrap();
                    let mut h = RoutingHash::new();
                    for &a in &r.argmax {
                        h.mix_i64(a as i64);
                    }
                    Probe {
                        loss: weighted_sum(&r.values, &coeffs),
                        routing: h.finish(),
                    }
                },
                &convmap,
                &analytic,
                1e-5,
            ),
        );

        let boxed = roipool::bbox_roi_pool(&convmap, mask.bbox_fm(), 3, 3)?;
        let analytic_box = roipool::freeform_roi_pool_backward(&boxed, &grad_out, &[8, 8, 2])?;
        push(
            "bbox_roi_pool",
            check_gradient(
                |x| {
                    let r = roipool::bbox_roi_pool(x, mask.bbox_fm(), 3, 3).unwrap();
                    let mut h = RoutingHash::new();
                    for &a in &r.argmax {
                        h.mix_i64(a as i64);
                    }
                    Probe {
                        loss: weighted_sum(&r.values, &coeffs),
                        routing: h.finish(),
                    }
                },
                &convmap,
                &analytic_box,
                1e-5,
            ),
        );
    }

    // region-to-pixel + softmax + log-loss
    {
        let proposals = grid_proposals(8, 8, &[4, 8], 0.5)?;
        let num_classes = 3;
        let scores = Tensor::rand_uniform(&[proposals.len(), num_classes], -2.0, 2.0, &mut rng);
        let targets: Vec<usize> = (0..64).map(|_| rng.gen_range(0..num_classes)).collect();
        let eval = |x: &Tensor| -> (f64, Tensor, u64) {
            let rs = RegionScores::new(x.clone()).unwrap();
            let pix = r2p::r2p_forward(&rs, &proposals).unwrap();
            let mut loss = 0.0;
            let mut pix_grad = Tensor::zeros(&[64, num_classes]);
            let mut logp = vec![0.0; num_classes];
            for p in 0..64 {
                let row = &pix.scores.data()[p * num_classes..(p + 1) * num_classes];
                ops::log_softmax_slice(row, &mut logp);
                loss -= logp[targets[p]];
                for c in 0..num_classes {
                    pix_grad.data_mut()[p * num_classes + c] =
                        logp[c].exp() - (c == targets[p]) as u8 as f64;
                }
            }
            let mut h = RoutingHash::new();
            for &w in &pix.winner {
                h.mix_i64(w as i64);
            }
            let grad = r2p::r2p_backward(&pix_grad, &pix.winner, proposals.len()).unwrap();
            (loss, grad, h.finish())
        };
        let (_, analytic, _) = eval(&scores);
        push(
            "region_to_pixel",
            check_gradient(
                |x| {
                    let (loss, _, routing) = eval(x);
                    Probe { loss, routing }
                },
                &scores,
                &analytic,
                1e-6,
            ),
        );
    }

    Ok(checks)
}

/// Whole-model finite-difference checks on a 16x16 synthetic image with
/// overlapping multi-scale proposals, across both combined fusion modes and
/// both loss weightings.
pub fn model_checks(seed: u64, samples_per_param: usize) -> Result<Vec<NamedCheck>> {
    let spec = SceneSpec::new(16, 16, 4, seed)?;
    let (image, gt) = synthesize(&spec, 0)?;
    let proposals = grid_proposals(16, 16, &[8, 16], 0.5)?;
    let set = proposals.union(&ground_truth_regions(&gt));
    assert!(set.len() >= 8, "need at least 8 overlapping regions");
    let partition = build_loss_partition(&set, &gt);

    let mut checks = Vec::new();
    for fusion in [FusionMode::Tied, FusionMode::Separate] {
        for loss_mode in [LossMode::Balanced, LossMode::Unbalanced] {
            let mut config = ModelConfig::end_to_end(4);
            config.fusion = fusion;
            config.loss_mode = loss_mode;
            config.softmax_order = SoftmaxOrder::MaxThenSoftmax;
            let weights = losses::class_weights(&gt, 4, loss_mode)?;
            let prepared = models::prepare_regions(set.clone(), &config)?;
            let mut state = ModelState::new(config, seed ^ 0xabcd)?;
            let loss = BatchLoss::Pixel {
                partition: &partition,
                weights: &weights,
            };
            let layer_checks = models::whole_model_gradcheck(
                &mut state,
                &image,
                &prepared,
                &loss,
                samples_per_param,
                1e-5,
                seed ^ 0x77,
            )?;
            let tag = format!(
                "model/{}/{}",
                match fusion {
                    FusionMode::Tied => "tied",
                    FusionMode::Separate => "separate",
                    FusionMode::BoxOnly => "box",
                    FusionMode::RegionOnly => "region",
                },
                match loss_mode {
                    LossMode::Balanced => "balanced",
                    LossMode::Unbalanced => "unbalanced",
                }
            );
            for check in layer_checks {
                checks.push(NamedCheck {
                    name: format!("{}/{}", tag, check.name),
                    report: check.report,
                    tolerance: MODEL_TOLERANCE,
                });
            }
        }
    }
    Ok(checks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layer_battery_passes() {
        for check in layer_checks(2024).unwrap() {
            assert!(
                check.passed(),
                "{}: err {} over {} coords ({} skipped)",
                check.name,
                check.report.max_rel_err,
                check.report.checked,
                check.report.skipped
            );
        }
    }

    #[test]
    fn model_battery_passes() {
        for check in model_checks(2024, 6).unwrap() {
            assert!(
                check.passed(),
                "{}: err {} over {} coords ({} skipped)",
                check.name,
                check.report.max_rel_err,
                check.report.checked,
                check.report.skipped
            );
        }
    }
}
