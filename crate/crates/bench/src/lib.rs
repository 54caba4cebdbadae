//! Shared fixtures for the benchmark targets: a synthetic image with its
//! ground truth, a dense multi-scale proposal set, random region scores and
//! the prebuilt loss partition.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use regseg_core::losses::{class_weights, ClassWeights, LossMode};
use regseg_core::partition::{build_loss_partition, LossPartition};
use regseg_core::regions::{grid_proposals, ground_truth_regions, LabelMap, RegionSet};
use regseg_core::synth::{synthesize, SceneSpec};
use regseg_core::r2p::RegionScores;
use regseg_core::tensor::Tensor;

pub struct LossFixture {
    pub gt: LabelMap,
    pub regions: RegionSet,
    pub scores: RegionScores,
    pub partition: LossPartition,
    pub weights: ClassWeights,
    pub num_classes: usize,
}

/// 64x64 scene with a dense multi-scale grid (>= 200 proposals) plus the
/// injected ground-truth regions.
pub fn loss_fixture(seed: u64) -> LossFixture {
    let num_classes = 8;
    let spec = SceneSpec::new(64, 64, num_classes, seed).expect("valid spec");
    let (_, gt) = synthesize(&spec, 0).expect("synthesis");
    let proposals = grid_proposals(64, 64, &[8, 16, 32], 0.5).expect("grid");
    assert!(proposals.len() >= 200, "fixture needs >= 200 proposals");
    let regions = proposals.union(&ground_truth_regions(&gt));
    let partition = build_loss_partition(&regions, &gt);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xbe);
    let scores = RegionScores::new(Tensor::from_vec(
        &[regions.len(), num_classes],
        (0..regions.len() * num_classes)
            .map(|_| rng.gen_range(-2.0..2.0))
            .collect(),
    )
    .expect("shape"))
    .expect("scores");
    let weights = class_weights(&gt, num_classes, LossMode::Balanced).expect("weights");
    LossFixture {
        gt,
        regions,
        scores,
        partition,
        weights,
        num_classes,
    }
}
