use ndarray::{s, Array3, Array4, ArrayD, IxDyn};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use vidswap_core::codec::{decode, downsample_mask, encode, latent_frames, upsample_mask, LATENT_CHANNELS};
use vidswap_core::data::{balance_quotas, FilterConfig};
use vidswap_core::fusion::{assemble, build_attention_mask, groups, FusionConfig, TokenLayout};
use vidswap_core::inference::{feather_alpha, schedule_segments};
use vidswap_core::mask_augment::{augment, AugmentConfig, AugmentMode};
use vidswap_core::tensor_io::Tensor;
use vidswap_core::video::{MaskSequence, VideoClip};

fn frames_strategy() -> impl Strategy<Value = usize> {
    (0usize..5).prop_map(|k| 4 * k + 1)
}

fn clip_strategy() -> impl Strategy<Value = VideoClip> {
    (frames_strategy(), 1usize..4, 1usize..4, any::<u64>()).prop_map(|(t, hb, wb, seed)| {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        VideoClip::new(Array4::from_shape_simple_fn((t, 3, 8 * hb, 8 * wb), || {
            rng.random::<f32>()
        }))
        .unwrap()
    })
}

/// A mask with one random rectangle per frame, nonempty in frame 0.
fn mask_strategy() -> impl Strategy<Value = MaskSequence> {
    (1usize..6, 16usize..48, 16usize..48, any::<u64>()).prop_map(|(t, h, w, seed)| {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Array3::zeros((t, h, w));
        for f in 0..t {
            if f > 0 && rng.random::<f64>() < 0.2 {
                continue;
            }
            let (y0, x0) = (rng.random_range(0..h), rng.random_range(0..w));
            let (y1, x1) = (rng.random_range(y0 + 1..=h), rng.random_range(x0 + 1..=w));
            m.slice_mut(s![f, y0..y1, x0..x1]).fill(1);
        }
        MaskSequence::new(m).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn codec_is_lossless(clip in clip_strategy()) {
        let lat = encode(&clip).unwrap();
        prop_assert_eq!(lat.dim(), (latent_frames(clip.frames()), LATENT_CHANNELS, clip.height() / 8, clip.width() / 8));
        prop_assert_eq!(decode(&lat).unwrap(), clip);
    }

    #[test]
    fn mask_latent_covers_every_masked_pixel(mask in mask_strategy()) {
        let t = mask.frames();
        let padded = 4 * ((t + 2) / 4) + 1;
        let (h, w) = (8 * mask.height().div_ceil(8), 8 * mask.width().div_ceil(8));
        let mut d = Array3::zeros((padded, h, w));
        d.slice_mut(s![..t, ..mask.height(), ..mask.width()]).assign(mask.data());
        let m = MaskSequence::new(d).unwrap();
        let up = upsample_mask(&downsample_mask(&m).unwrap());
        prop_assert!(up.contains(&m));
    }

    #[test]
    fn augmented_mask_contains_input(mask in mask_strategy(), seed in any::<u64>(), train in any::<bool>()) {
        let mode = if train { AugmentMode::Train } else { AugmentMode::Inference };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = augment(&mask, mode, &AugmentConfig::default(), &mut rng).unwrap();
        prop_assert!(a.mask.contains(&mask));
        prop_assert_eq!(a.record.k_per_frame.len(), mask.frames());
        let again = augment(&mask, mode, &AugmentConfig::default(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(a.mask, again.mask);
    }

    #[test]
    fn reference_tokens_attend_only_to_reference(frames in 2usize..6, h in 1usize..4, w in 1usize..4) {
        let layout = TokenLayout::new(frames, 2 * h, 2 * w, 2).unwrap();
        let mask = build_attention_mask(&layout);
        for q in 0..layout.total_tokens() {
            for k in 0..layout.total_tokens() {
                let expected = !layout.is_ref_token(q) || layout.is_ref_token(k);
                prop_assert_eq!(mask.allowed(q, k), expected);
            }
        }
    }

    #[test]
    fn fused_groups_hold_their_streams(t in frames_strategy(), seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rand_clip = || VideoClip::new(Array4::from_shape_simple_fn((t, 3, 16, 16), || rng.random::<f32>())).unwrap();
        let (noisy, agn, pose) = (encode(&rand_clip()).unwrap(), encode(&rand_clip()).unwrap(), encode(&rand_clip()).unwrap());
        let reference = encode(&VideoClip::new(Array4::from_elem((1, 3, 16, 16), 0.25)).unwrap()).unwrap();
        let mask = downsample_mask(&MaskSequence::new(Array3::from_elem((t, 16, 16), 1)).unwrap()).unwrap();
        let fused = assemble(&noisy, &agn, &pose, &mask, &reference, None, &FusionConfig::default()).unwrap();
        let f = &fused.tensor;
        prop_assert_eq!(f.slice(s![0, groups::NOISY, .., ..]), reference.data().slice(s![0, .., .., ..]));
        prop_assert_eq!(f.slice(s![1.., groups::NOISY, .., ..]), noisy.data().view());
        prop_assert_eq!(f.slice(s![1.., groups::AGNOSTIC, .., ..]), agn.data().view());
        prop_assert_eq!(f.slice(s![1.., groups::POSE, .., ..]), pose.data().view());
        prop_assert!(f.slice(s![0, groups::AGNOSTIC.start.., .., ..]).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn segments_tile_the_clip(total in 1usize..400, k in 1usize..10) {
        let length = 4 * k + 1;
        let segs = schedule_segments(total, length).unwrap();
        prop_assert_eq!(segs[0].start, 0);
        prop_assert_eq!(segs.last().unwrap().end, total - 1);
        for w in segs.windows(2) {
            prop_assert_eq!(w[0].end, w[1].start);
            prop_assert_eq!(w[0].pad, 0);
        }
        for seg in &segs {
            prop_assert_eq!(seg.padded_frames() % 4, 1);
            prop_assert!(seg.padded_frames() <= length);
            prop_assert!(seg.pad < 4);
        }
    }

    #[test]
    fn bad_segment_lengths_are_rejected(length in 0usize..64) {
        prop_assume!(length < 5 || length % 4 != 1);
        prop_assert!(schedule_segments(40, length).is_err());
    }

    #[test]
    fn feather_alpha_is_a_weight(mask in mask_strategy(), radius in 0usize..6) {
        let alpha = feather_alpha(&mask.frame(0), radius);
        prop_assert!(alpha.iter().all(|&a| (0.0..=1.0).contains(&a)));
        if radius == 0 {
            prop_assert!(alpha.iter().zip(mask.frame(0).iter()).all(|(&a, &m)| a == f32::from(m)));
        }
    }

    #[test]
    fn tensor_bytes_round_trip(dims in prop::collection::vec(1usize..5, 1..5), seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = IxDyn(&dims);
        let tensors = [
            Tensor::F32(ArrayD::from_shape_simple_fn(shape.clone(), || rng.random::<f32>())),
            Tensor::F64(ArrayD::from_shape_simple_fn(shape.clone(), || rng.random::<f64>())),
            Tensor::U8(ArrayD::from_shape_simple_fn(shape.clone(), || rng.random::<u8>())),
            Tensor::I32(ArrayD::from_shape_simple_fn(shape, || rng.random::<i32>())),
        ];
        for t in tensors {
            let bytes = t.to_bytes().unwrap();
            prop_assert_eq!(Tensor::from_bytes(&bytes).unwrap(), t);
        }
    }

    #[test]
    fn truncated_tensor_bytes_are_rejected(dims in prop::collection::vec(1usize..5, 1..4), cut in 1usize..16) {
        let t = Tensor::F32(ArrayD::zeros(IxDyn(&dims)));
        let bytes = t.to_bytes().unwrap();
        let keep = bytes.len().saturating_sub(cut);
        prop_assert!(Tensor::from_bytes(&bytes[..keep]).is_err());
    }

    #[test]
    fn quotas_never_exceed_availability(available in prop::array::uniform4(0usize..500)) {
        let cfg = FilterConfig::default();
        let (quota, _) = balance_quotas(available, &cfg);
        for i in 0..4 {
            prop_assert!(quota[i] <= available[i]);
        }
    }
}
