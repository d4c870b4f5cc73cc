//! Shared helpers for unit tests.

use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::geom::{Pose, Vec3};
use crate::segments::SegmentSet;

pub(crate) fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        if v.norm() > 0.1 {
            return v.normalized().unwrap();
        }
    }
}

pub(crate) fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
    let p = Vec3::new(
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
    );
    Pose { position: p, orientation: random_unit(rng) }
}

pub(crate) fn random_segment_set(rng: &mut ChaCha8Rng, count: usize, lambda: usize) -> SegmentSet {
    let mut set = SegmentSet::empty(lambda);
    for _ in 0..count {
        let poses: Vec<Pose> = (0..lambda).map(|_| random_pose(rng)).collect();
        set.push_unlabeled(crate::geom::Segment::new(poses, lambda).unwrap()).unwrap();
    }
    set
}
