mod common;

use common::*;
use proptest::prelude::*;
use rand::RngExt;
use roomweave::imaging::*;
use roomweave::raster::{FrameBundle, Raster, RgbImage, NO_HIT};

#[test]
fn morphology_matches_brute_force_on_random_masks() {
    let mut r = rng(21);
    for i in 0..50 {
        let (w, h) = (r.random_range(1..40), r.random_range(1..40));
        let mask = if i % 2 == 0 {
            let density = r.random_range(0.05..0.95);
            random_mask(&mut r, w, h, density)
        } else {
            blob_mask(&mut r, w, h, 4)
        };
        for k in [1, 3, 5, 7] {
            assert_eq!(
                erode(&mask, k).unwrap(),
                brute_rank(&mask, k, false),
                "erode k={k} case {i}"
            );
            assert_eq!(
                dilate_repeated(&mask, k, 1).unwrap(),
                brute_rank(&mask, k, true),
                "dilate k={k} case {i}"
            );
        }
    }
}

#[test]
fn twenty_pixel_hole_dilates_to_forty_eight() {
    let mut mask = Raster::filled(80, 80, false);
    for v in 30..50 {
        for u in 30..50 {
            mask.set(u, v, true);
        }
    }
    // Erosion trims one pixel per side, five 7×7 dilations add fifteen.
    let params = MaskCleaningParams::default();
    let eroded = erode(&mask, params.erosion_kernel).unwrap();
    assert_eq!(eroded.count_ones(), 18 * 18);
    let grown = dilate_repeated(&eroded, params.dilation_kernel, params.dilation_iterations).unwrap();
    assert_eq!(grown.count_ones(), 48 * 48);
}

fn telea_case(seed: u64) -> (RgbImage, roomweave::Mask) {
    let mut r = rng(seed);
    let (w, h) = (r.random_range(4..24), r.random_range(4..24));
    let rgb = Raster::from_fn(w, h, |_, _| {
        [r.random_range(0.0..1.0f32), r.random_range(0.2..0.6f32), 0.25]
    });
    let mut mask = blob_mask(&mut r, w, h, 3);
    mask.set(0, 0, false);
    (rgb, mask)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dilation_composes(seed in any::<u64>(), a in 0usize..4, b in 0usize..4) {
        let mut r = rng(seed);
        let mask = random_mask(&mut r, 23, 17, 0.05);
        let (ka, kb) = (2 * a + 1, 2 * b + 1);
        let two = dilate_repeated(&dilate_repeated(&mask, ka, 1).unwrap(), kb, 1).unwrap();
        let one = dilate_repeated(&mask, ka + kb - 1, 1).unwrap();
        prop_assert_eq!(two, one);
    }

    #[test]
    fn erosion_is_dual_to_dilation_with_set_border(seed in any::<u64>(), k in 0usize..4) {
        let mut r = rng(seed);
        let mask = random_mask(&mut r, 19, 13, 0.5);
        let k = 2 * k + 1;
        let lhs = erode_with_border(&mask, k, false).unwrap();
        let rhs = dilate_with_border(&mask.not(), k, true).unwrap().not();
        prop_assert_eq!(lhs, rhs);
    }

    #[test]
    fn erosion_shrinks_and_dilation_grows(seed in any::<u64>(), k in 0usize..4) {
        let mut r = rng(seed);
        let mask = blob_mask(&mut r, 21, 21, 3);
        let k = 2 * k + 1;
        let e = erode(&mask, k).unwrap();
        let d = dilate_repeated(&mask, k, 1).unwrap();
        prop_assert!(e.and_not(&mask).count_ones() == 0);
        prop_assert!(mask.and_not(&d).count_ones() == 0);
    }

    #[test]
    fn telea_keeps_known_pixels_and_range(seed in any::<u64>()) {
        let (rgb, mask) = telea_case(seed);
        let out = telea_inpaint(&rgb, &mask, 3).unwrap();
        let mut lo = [f32::INFINITY; 3];
        let mut hi = [f32::NEG_INFINITY; 3];
        for (p, &m) in rgb.data().iter().zip(mask.data()) {
            if !m {
                for c in 0..3 {
                    lo[c] = lo[c].min(p[c]);
                    hi[c] = hi[c].max(p[c]);
                }
            }
        }
        for ((o, p), &m) in out.data().iter().zip(rgb.data()).zip(mask.data()) {
            if m {
                for c in 0..3 {
                    prop_assert!(o[c] >= lo[c] && o[c] <= hi[c], "{} not in [{}, {}]", o[c], lo[c], hi[c]);
                }
            } else {
                prop_assert_eq!(o.map(f32::to_bits), p.map(f32::to_bits));
            }
        }
    }

    #[test]
    fn cleaning_partitions_the_mask(seed in any::<u64>()) {
        let (rgb, mask) = telea_case(seed);
        let depth = Raster::from_fn(rgb.width(), rgb.height(), |u, v| if mask.at(u, v) { NO_HIT } else { 1.0 });
        let frame = FrameBundle { rgb: rgb.clone(), depth, mask: mask.clone() };
        let cleaned = clean_inpaint_mask(&frame, &MaskCleaningParams::default()).unwrap();
        // Every unobserved pixel is either a small hole or inside the dilated region.
        prop_assert_eq!(mask.and_not(&cleaned.small_holes.or(&cleaned.dilated)).count_ones(), 0);
        prop_assert_eq!(cleaned.small_holes.and_not(&mask).count_ones(), 0);
        for i in 0..rgb.len() {
            if !cleaned.small_holes.data()[i] {
                prop_assert_eq!(cleaned.rgb.data()[i], rgb.data()[i]);
            }
        }
    }
}
