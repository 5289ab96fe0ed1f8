//! Fast invariant checks over every pipeline stage.

use ndarray::{Array3, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use vidswap_core::codec::{decode, downsample_mask, encode, MaskLatent};
use vidswap_core::data::{balance_quotas, FilterConfig};
use vidswap_core::denoiser::reweighted_loss;
use vidswap_core::eval::background_preservation;
use vidswap_core::fusion::{build_attention_mask, TokenLayout};
use vidswap_core::inference::{plan_tunnel, schedule_segments, TUNNEL_MARGIN, TUNNEL_THRESHOLD};
use vidswap_core::mask_augment::{augment, AugmentConfig, AugmentMode};
use vidswap_core::video::{MaskSequence, VideoClip};

#[derive(Debug, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
}

fn random_clip(rng: &mut ChaCha8Rng, t: usize) -> VideoClip {
    VideoClip::new(Array4::from_shape_simple_fn((t, 3, 32, 32), || rng.random::<f32>())).expect("in range")
}

fn codec_round_trip(rng: &mut ChaCha8Rng) -> bool {
    (0..5).all(|_| {
        let c = random_clip(rng, 9);
        decode(&encode(&c).unwrap()).unwrap() == c
    })
}

fn attention_isolation() -> bool {
    let l = TokenLayout::new(5, 4, 4, 2).unwrap();
    build_attention_mask(&l).forbidden_count() == l.ref_tokens() * l.video_tokens()
}

fn loss_identities() -> bool {
    let l = ndarray::Array4::<f64>::ones((2, 768, 2, 2));
    let mut m = ndarray::Array4::<u8>::zeros((2, 4, 2, 2));
    // One of four mask channels set everywhere covers a quarter of the latent cells.
    m.slice_mut(ndarray::s![.., 0, .., ..]).fill(1);
    let quarter = reweighted_loss(&l.view(), &MaskLatent::new(m).unwrap(), 1.0).unwrap();
    let full = reweighted_loss(
        &l.view(),
        &MaskLatent::new(ndarray::Array4::ones((2, 4, 2, 2))).unwrap(),
        1.0,
    )
    .unwrap();
    (quarter.l_final - 1.75).abs() <= 1e-6 && (full.l_final - 1.0).abs() <= 1e-6
}

fn augment_superset(rng: &mut ChaCha8Rng) -> bool {
    let cfg = AugmentConfig::default();
    (0..50).all(|i| {
        let mut m = Array3::zeros((5, 32, 32));
        let (y, x) = (rng.random_range(0..24), rng.random_range(0..24));
        m.slice_mut(ndarray::s![.., y..y + 6, x..x + 6]).fill(1);
        let m = MaskSequence::new(m).unwrap();
        let mode = if i % 2 == 0 {
            AugmentMode::Train
        } else {
            AugmentMode::Inference
        };
        augment(&m, mode, &cfg, rng)
            .map(|a| a.mask.contains(&m))
            .unwrap_or(false)
    })
}

fn scheduler() -> bool {
    (1..200).all(|t| {
        let s = schedule_segments(t, 17).unwrap();
        s[0].start == 0
            && s.last().unwrap().end == t - 1
            && s.windows(2).all(|w| w[0].end == w[1].start)
            && s.iter().all(|g| g.padded_frames() % 4 == 1)
    })
}

fn balance_examples() -> bool {
    let cfg = FilterConfig::default();
    balance_quotas([100, 20, 100, 100], &cfg) == ([100, 20, 100, 100], true)
        && balance_quotas([200, 20, 100, 100], &cfg) == ([100, 20, 100, 100], true)
        && !balance_quotas([10, 0, 10, 10], &cfg).1
}

fn tunnel_threshold() -> bool {
    // 3 of 64 pixels is below 0.05; 4 of 64 is above.
    let mask = |n: usize| {
        let mut m = Array3::zeros((1, 8, 8));
        for i in 0..n {
            m[[0, 0, i]] = 1;
        }
        MaskSequence::new(m).unwrap()
    };
    plan_tunnel(&mask(3), TUNNEL_THRESHOLD, TUNNEL_MARGIN).unwrap().active
        && !plan_tunnel(&mask(4), TUNNEL_THRESHOLD, TUNNEL_MARGIN).unwrap().active
}

fn metric_identity(rng: &mut ChaCha8Rng) -> bool {
    let c = random_clip(rng, 5);
    let mut m = Array3::zeros((5, 32, 32));
    m.slice_mut(ndarray::s![.., 0..4, 0..4]).fill(1);
    let m = MaskSequence::new(m).unwrap();
    background_preservation(&c, &c, &m, 8).unwrap() == Some(1.0) && downsample_mask(&m).is_ok()
}

pub fn run(seed: u64) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    vec![
        Check {
            name: "codec_round_trip",
            passed: codec_round_trip(&mut rng),
        },
        Check {
            name: "attention_isolation",
            passed: attention_isolation(),
        },
        Check {
            name: "loss_identities",
            passed: loss_identities(),
        },
        Check {
            name: "augment_superset",
            passed: augment_superset(&mut rng),
        },
        Check {
            name: "segment_scheduler",
            passed: scheduler(),
        },
        Check {
            name: "balance_examples",
            passed: balance_examples(),
        },
        Check {
            name: "tunnel_threshold",
            passed: tunnel_threshold(),
        },
        Check {
            name: "background_identity",
            passed: metric_identity(&mut rng),
        },
    ]
}
