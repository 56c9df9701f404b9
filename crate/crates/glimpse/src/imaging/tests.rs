use super::*;
use rand::Rng;

fn noise_image(c: usize, h: usize, w: usize, seed_val: u64) -> ImageBuffer {
    let mut rng = seed::rng(seed_val, "test-noise", &[]);
    ImageBuffer::from_array_unchecked(Array3::from_shape_fn((c, h, w), |_| rng.random::<f32>()))
}

fn count_ones(w: &LossWeightMap) -> usize {
    w.data().iter().filter(|&&v| v == 1.0).count()
}

fn count_zeros(w: &LossWeightMap) -> usize {
    w.data().iter().filter(|&&v| v == 0.0).count()
}

use ndarray::Array3;

#[test]
fn mean_color_uniform() {
    let img = ImageBuffer::from_fn(3, 6, 6, |_, _, _| 0.3);
    let m = mean_color(&img);
    for v in m {
        assert!((v - 0.3).abs() < 1e-7);
    }
}

#[test]
fn mean_color_half_and_half() {
    let img = ImageBuffer::from_fn(3, 4, 4, |_, y, _| if y < 2 { 0.0 } else { 1.0 });
    for v in mean_color(&img) {
        assert!((v - 0.5).abs() < 1e-7);
    }
}

#[test]
fn mean_color_matches_scalar_loop_oracle() {
    let img = noise_image(3, 4, 4, 99);
    let got = mean_color(&img);
    // independent brute-force pixel loop
    for c in 0..3 {
        let mut acc = 0.0f64;
        for y in 0..4 {
            for x in 0..4 {
                acc += img.get(c, y, x) as f64;
            }
        }
        let want = (acc / 16.0) as f32;
        assert!((got[c] - want).abs() < 1e-6);
    }
}

#[test]
fn random_patches_ratio_06_masks_86_patches() {
    let img = noise_image(3, 96, 96, 1);
    let plan = MaskPlan::new(MaskStrategy::RandomPatches, 0.6).with_seed(7);
    let (out, w) = apply_random_patch_mask(&img, &plan).unwrap();
    // round(144 * 0.6) = 86 patches of 64 pixels
    assert_eq!(count_ones(&w), 86 * 64);
    assert_eq!(count_ones(&w), 5504);
    let mean = mean_color(&img);
    for y in 0..96 {
        for x in 0..96 {
            for c in 0..3 {
                if w.get(y, x) == 1.0 {
                    assert_eq!(out.get(c, y, x), mean[c]);
                } else {
                    assert_eq!(out.get(c, y, x), img.get(c, y, x));
                }
            }
        }
    }
}

#[test]
fn random_patches_ratio_zero_is_identity() {
    let img = noise_image(3, 32, 32, 2);
    let plan = MaskPlan::new(MaskStrategy::RandomPatches, 0.0).with_seed(3);
    let (out, w) = apply_random_patch_mask(&img, &plan).unwrap();
    assert_eq!(out, img);
    assert_eq!(count_zeros(&w), 32 * 32);
}

#[test]
fn random_patches_ratio_one_masks_everything() {
    let img = noise_image(3, 32, 32, 4);
    let plan = MaskPlan::new(MaskStrategy::RandomPatches, 1.0).with_seed(3);
    let (out, w) = apply_random_patch_mask(&img, &plan).unwrap();
    let mean = mean_color(&img);
    assert_eq!(count_ones(&w), 32 * 32);
    for c in 0..3 {
        for v in out.data().index_axis(ndarray::Axis(0), c).iter() {
            assert_eq!(*v, mean[c]);
        }
    }
}

#[test]
fn random_patches_rejects_bad_grid() {
    let img = noise_image(3, 30, 30, 5);
    let plan = MaskPlan::new(MaskStrategy::RandomPatches, 0.5); // 8 does not divide 30
    assert!(matches!(
        apply_random_patch_mask(&img, &plan),
        Err(ImagingError::PatchGridMismatch { .. })
    ));
}

#[test]
fn fixed_layout_reused_on_every_call() {
    let img_a = noise_image(3, 48, 48, 6);
    let img_b = noise_image(3, 48, 48, 7);
    let mut plan = MaskPlan::new(MaskStrategy::RandomPatches, 0.4).with_seed(11);
    let layout = sample_patch_layout(&plan, 48, 48).unwrap();
    plan.fixed_layout = Some(layout);
    let (_, wa) = apply_random_patch_mask(&img_a, &plan).unwrap();
    // different image, different call seed — layout must not change
    let plan2 = MaskPlan { seed: 999, ..plan.clone() };
    let (_, wb) = apply_random_patch_mask(&img_b, &plan2).unwrap();
    assert_eq!(wa, wb);
}

#[test]
fn periphery_ratio_08_radius_and_count() {
    let r = circle_radius_for_masked_fraction(96, 96, 0.8);
    assert!((r - 24.2217).abs() < 1e-3, "radius {r}");
    let img = noise_image(3, 96, 96, 8);
    let plan = MaskPlan::new(MaskStrategy::MaskedPeriphery, 0.8);
    let (_, w) = apply_peripheral_mask(&img, &plan).unwrap();
    // pixel-center oracle
    let mut inside = 0usize;
    for y in 0..96 {
        for x in 0..96 {
            let dy = y as f64 + 0.5 - 48.0;
            let dx = x as f64 + 0.5 - 48.0;
            if (dy * dy + dx * dx).sqrt() < r {
                inside += 1;
            }
        }
    }
    let unmasked = count_zeros(&w);
    assert_eq!(unmasked, inside);
    assert!((unmasked as i64 - 1843).unsigned_abs() <= 10, "unmasked {unmasked}");
}

#[test]
fn periphery_ratio_zero_masks_nothing() {
    let img = noise_image(3, 96, 96, 9);
    let plan = MaskPlan::new(MaskStrategy::MaskedPeriphery, 0.0);
    let (out, w) = apply_peripheral_mask(&img, &plan).unwrap();
    assert_eq!(out, img);
    assert_eq!(w.support_area(), 0.0);
}

#[test]
fn periphery_center_pixel_survives_any_ratio_below_one() {
    // odd-sized image: the central pixel sits exactly on the image center
    let img = noise_image(1, 97, 97, 10);
    for ratio in [0.1, 0.5, 0.9, 0.99, 0.9999] {
        let plan = MaskPlan::new(MaskStrategy::MaskedPeriphery, ratio);
        let (out, w) = apply_peripheral_mask(&img, &plan).unwrap();
        assert_eq!(w.get(48, 48), 0.0, "ratio {ratio}");
        assert_eq!(out.get(0, 48, 48), img.get(0, 48, 48));
    }
}

#[test]
fn masked_fraction_tracks_ratio_across_grid() {
    // The module invariant backing acceptance criterion 1.
    let img = noise_image(3, 96, 96, 11);
    for i in 1..=9 {
        let ratio = i as f64 / 10.0;
        for strategy in [
            MaskStrategy::RandomPatches,
            MaskStrategy::MaskedPeriphery,
            MaskStrategy::BlurryPatches,
            MaskStrategy::BlurryPeriphery,
            MaskStrategy::FovealFilter,
        ] {
            let plan = MaskPlan::new(strategy, ratio).with_seed(i as u64);
            let (_, w) = apply_plan(&img, &plan).unwrap();
            let tol = match strategy {
                MaskStrategy::RandomPatches | MaskStrategy::BlurryPatches => 1.0 / 144.0,
                _ => 0.005,
            };
            let got = w.area_fraction();
            assert!(
                (got - ratio).abs() <= tol,
                "{strategy:?} ratio {ratio}: fraction {got}"
            );
        }
    }
}

#[test]
fn same_plan_same_output_bitwise() {
    let img = noise_image(3, 96, 96, 12);
    for strategy in [
        MaskStrategy::RandomPatches,
        MaskStrategy::MaskedPeriphery,
        MaskStrategy::BlurryPatches,
        MaskStrategy::BlurryPeriphery,
        MaskStrategy::FovealFilter,
    ] {
        let plan = MaskPlan::new(strategy, 0.6).with_seed(1234);
        let (a_img, a_w) = apply_plan(&img, &plan).unwrap();
        let (b_img, b_w) = apply_plan(&img, &plan).unwrap();
        assert_eq!(a_img, b_img, "{strategy:?}");
        assert_eq!(a_w, b_w, "{strategy:?}");
    }
}

#[test]
fn opaque_and_blurry_share_weight_maps() {
    let img = noise_image(3, 96, 96, 13);
    for (opaque, blurry) in [
        (MaskStrategy::RandomPatches, MaskStrategy::BlurryPatches),
        (MaskStrategy::MaskedPeriphery, MaskStrategy::BlurryPeriphery),
    ] {
        let p_opaque = MaskPlan::new(opaque, 0.7).with_seed(77);
        let p_blurry = MaskPlan::new(blurry, 0.7).with_seed(77);
        let (_, wo) = apply_plan(&img, &p_opaque).unwrap();
        let (_, wb) = apply_plan(&img, &p_blurry).unwrap();
        assert_eq!(wo, wb);
    }
}

#[test]
fn blur_variant_uniform_image_unchanged() {
    let img = ImageBuffer::from_fn(3, 32, 32, |_, _, _| 0.55);
    let plan = MaskPlan::new(MaskStrategy::BlurryPeriphery, 0.6).with_seed(1);
    let (out, _) = apply_blur_variant(&img, &plan).unwrap();
    for (&a, &b) in out.data().iter().zip(img.data().iter()) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn blur_variant_degenerate_sigma_is_near_identity() {
    let img = noise_image(3, 32, 32, 14);
    let mut plan = MaskPlan::new(MaskStrategy::BlurryPatches, 0.5).with_seed(2);
    plan.blur_sigma = Some(0.1);
    let (out, w) = apply_blur_variant(&img, &plan).unwrap();
    for y in 0..32 {
        for x in 0..32 {
            if w.get(y, x) == 1.0 {
                for c in 0..3 {
                    assert!((out.get(c, y, x) - img.get(c, y, x)).abs() < 1e-3);
                }
            }
        }
    }
}

#[test]
fn blur_variant_rejects_nonpositive_sigma() {
    let img = noise_image(3, 32, 32, 15);
    let mut plan = MaskPlan::new(MaskStrategy::BlurryPeriphery, 0.5);
    plan.blur_sigma = Some(0.0);
    assert!(matches!(apply_blur_variant(&img, &plan), Err(ImagingError::NonPositiveSigma(_))));
}

#[test]
fn blur_reduces_variance_inside_region() {
    // 100 seeded white-noise images; pooled pixel variance inside the blurred
    // region must be well below the variance outside it.
    let plan = MaskPlan::new(MaskStrategy::BlurryPeriphery, 0.5).with_seed(3);
    let (mut s_in, mut q_in, mut n_in) = (0.0f64, 0.0f64, 0usize);
    let (mut s_out, mut q_out, mut n_out) = (0.0f64, 0.0f64, 0usize);
    for i in 0..100 {
        let img = noise_image(3, 48, 48, 1000 + i);
        let (out, w) = apply_blur_variant(&img, &plan).unwrap();
        for y in 0..48 {
            for x in 0..48 {
                let v = out.get(0, y, x) as f64;
                if w.get(y, x) == 1.0 {
                    s_in += v;
                    q_in += v * v;
                    n_in += 1;
                } else {
                    s_out += v;
                    q_out += v * v;
                    n_out += 1;
                }
            }
        }
    }
    let var_in = q_in / n_in as f64 - (s_in / n_in as f64).powi(2);
    let var_out = q_out / n_out as f64 - (s_out / n_out as f64).powi(2);
    assert!(var_in < var_out, "inside {var_in} vs outside {var_out}");
    assert!(var_in < 0.5 * var_out);
}

#[test]
fn foveal_center_and_uniform_untouched() {
    let img = noise_image(3, 96, 96, 16);
    let plan = MaskPlan::new(MaskStrategy::FovealFilter, 0.8);
    let fixation = default_fixation(&plan, 96, 96);
    let (out, w) = apply_foveal_filter(&img, &fixation, &plan).unwrap();
    // pixels near the fixation center are level 0 == original
    for c in 0..3 {
        assert!((out.get(c, 48, 48) - img.get(c, 48, 48)).abs() < 1e-3);
    }
    assert_eq!(w.get(48, 48), 0.0);

    let flat = ImageBuffer::from_fn(3, 48, 48, |_, _, _| 0.25);
    let plan2 = MaskPlan::new(MaskStrategy::FovealFilter, 0.5);
    let fix2 = default_fixation(&plan2, 48, 48);
    let (out2, _) = apply_foveal_filter(&flat, &fix2, &plan2).unwrap();
    for (&a, &b) in out2.data().iter().zip(flat.data().iter()) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn foveal_rejects_out_of_bounds_fixation() {
    let img = noise_image(3, 32, 32, 17);
    let plan = MaskPlan::new(MaskStrategy::FovealFilter, 0.5);
    let fixation = FixationSpec { center: (40.0, 16.0), fovea_radius: 4.0 };
    assert!(matches!(
        apply_foveal_filter(&img, &fixation, &plan),
        Err(ImagingError::FixationOutsideImage(_, _))
    ));
}

#[test]
fn foveal_high_frequency_energy_decays_with_eccentricity() {
    // Variance of a 3x3 Laplacian response in concentric annuli must be
    // non-increasing with annulus radius, pooled over 20 seeded noise images.
    let plan = MaskPlan::new(MaskStrategy::FovealFilter, 0.9);
    let fixation = default_fixation(&plan, 96, 96);
    let r_f = fixation.fovea_radius;
    let edges: Vec<f64> = vec![r_f, r_f + 8.0, r_f + 16.0, r_f + 24.0, r_f + 32.0, r_f + 44.0];
    let mut sums = vec![0.0f64; edges.len() - 1];
    let mut sqs = vec![0.0f64; edges.len() - 1];
    let mut counts = vec![0usize; edges.len() - 1];
    for i in 0..20 {
        let img = noise_image(1, 96, 96, 2000 + i);
        let (out, _) = apply_foveal_filter(&img, &fixation, &plan).unwrap();
        for y in 1..95 {
            for x in 1..95 {
                let e = ((y as f64 + 0.5 - 48.0).powi(2) + (x as f64 + 0.5 - 48.0).powi(2)).sqrt();
                let band = edges.windows(2).position(|b| e >= b[0] && e < b[1]);
                if let Some(b) = band {
                    let lap = 4.0 * out.get(0, y, x)
                        - out.get(0, y - 1, x)
                        - out.get(0, y + 1, x)
                        - out.get(0, y, x - 1)
                        - out.get(0, y, x + 1);
                    sums[b] += lap as f64;
                    sqs[b] += (lap as f64) * (lap as f64);
                    counts[b] += 1;
                }
            }
        }
    }
    let vars: Vec<f64> = (0..sums.len())
        .map(|b| {
            let n = counts[b] as f64;
            sqs[b] / n - (sums[b] / n).powi(2)
        })
        .collect();
    for i in 1..vars.len() {
        assert!(
            vars[i] <= vars[i - 1] * (1.0 + 1e-9),
            "annulus {i}: {:?}",
            vars
        );
    }
}

#[test]
fn covert_attention_subset_aperture_changes_nothing() {
    let img = noise_image(3, 96, 96, 18);
    let mut plan = MaskPlan::new(MaskStrategy::MaskedPeriphery, 0.8);
    let (single, ws) = apply_peripheral_mask(&img, &plan).unwrap();
    // concentric and smaller than the fovea circle
    plan.attention = Some(AttentionSpec { center: (48.0, 48.0), radius: 5.0 });
    let (dual, wd) = add_covert_attention(&img, &plan).unwrap();
    assert_eq!(single, dual);
    assert_eq!(ws, wd);
}

#[test]
fn covert_attention_disjoint_aperture_doubles_unmasked_area() {
    let img = noise_image(3, 96, 96, 19);
    let mut plan = MaskPlan::new(MaskStrategy::MaskedPeriphery, 0.9);
    let r = circle_radius_for_masked_fraction(96, 96, 0.9);
    let (_, ws) = apply_peripheral_mask(&img, &plan).unwrap();
    let single = count_zeros(&ws);
    plan.attention = Some(AttentionSpec { center: (73.0, 73.0), radius: r });
    let (out, wd) = add_covert_attention(&img, &plan).unwrap();
    let dual = count_zeros(&wd);
    let rel = (dual as f64 - 2.0 * single as f64).abs() / (2.0 * single as f64);
    assert!(rel < 0.02, "single {single}, dual {dual}");
    // restored pixels match the input exactly
    for y in 0..96 {
        for x in 0..96 {
            if wd.get(y, x) == 0.0 {
                for c in 0..3 {
                    assert_eq!(out.get(c, y, x), img.get(c, y, x));
                }
            }
        }
    }
}

#[test]
fn covert_attention_clips_to_image() {
    let img = noise_image(3, 96, 96, 20);
    let mut plan = MaskPlan::new(MaskStrategy::MaskedPeriphery, 0.9);
    let r = circle_radius_for_masked_fraction(96, 96, 0.9);
    let center = (48.0, 95.0);
    plan.attention = Some(AttentionSpec { center, radius: r });
    let (_, wd) = add_covert_attention(&img, &plan).unwrap();
    // oracle: union of both apertures, clipped to the image
    let mut want = 0usize;
    for y in 0..96 {
        for x in 0..96 {
            let pc = (y as f64 + 0.5, x as f64 + 0.5);
            let d_fovea = ((pc.0 - 48.0).powi(2) + (pc.1 - 48.0).powi(2)).sqrt();
            let d_att = ((pc.0 - center.0).powi(2) + (pc.1 - center.1).powi(2)).sqrt();
            if d_fovea < r || d_att < r {
                want += 1;
            }
        }
    }
    assert_eq!(count_zeros(&wd), want);
}

#[test]
fn covert_attention_fully_outside_is_error() {
    let img = noise_image(3, 96, 96, 21);
    let mut plan = MaskPlan::new(MaskStrategy::MaskedPeriphery, 0.8);
    plan.attention = Some(AttentionSpec { center: (48.0, 200.0), radius: 10.0 });
    assert!(matches!(
        add_covert_attention(&img, &plan),
        Err(ImagingError::AttentionOutsideImage)
    ));
}

#[test]
fn strategy_none_keeps_image_with_full_support() {
    let img = noise_image(3, 32, 32, 22);
    let plan = MaskPlan::new(MaskStrategy::None, 0.0);
    let (out, w) = apply_plan(&img, &plan).unwrap();
    assert_eq!(out, img);
    assert_eq!(w.support_area(), (32 * 32) as f64);
}

#[test]
fn unmasked_pixels_bitwise_unchanged_and_in_range() {
    let img = noise_image(3, 96, 96, 23);
    for strategy in [
        MaskStrategy::RandomPatches,
        MaskStrategy::MaskedPeriphery,
        MaskStrategy::BlurryPatches,
        MaskStrategy::BlurryPeriphery,
        MaskStrategy::FovealFilter,
    ] {
        let plan = MaskPlan::new(strategy, 0.65).with_seed(31);
        let (out, w) = apply_plan(&img, &plan).unwrap();
        for v in out.data().iter() {
            assert!((0.0..=1.0).contains(v), "{strategy:?}");
        }
        for y in 0..96 {
            for x in 0..96 {
                if w.get(y, x) == 0.0 {
                    for c in 0..3 {
                        assert_eq!(out.get(c, y, x), img.get(c, y, x), "{strategy:?} ({y},{x})");
                    }
                }
            }
        }
    }
}

#[test]
fn rounding_ties_to_even() {
    assert_eq!(round_ties_even(4.5), 4);
    assert_eq!(round_ties_even(5.5), 6);
    assert_eq!(round_ties_even(0.5), 0);
    assert_eq!(round_ties_even(1.5), 2);
    assert_eq!(round_ties_even(86.4), 86);
    assert_eq!(round_ties_even(86.6), 87);
}

#[test]
fn image_buffer_validates() {
    assert!(ImageBuffer::from_array(Array3::zeros((0, 4, 4))).is_err());
    let mut bad = Array3::zeros((1, 2, 2));
    bad[(0, 0, 0)] = 1.5;
    assert!(matches!(ImageBuffer::from_array(bad), Err(ImagingError::ValueOutOfRange(_))));
}

mod properties {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn plan_application_is_deterministic_and_range_preserving(
            seed_val in 0u64..1_000_000,
            ratio in 0.0f64..=1.0,
            strat in 0usize..5,
        ) {
            let strategy = [
                MaskStrategy::RandomPatches,
                MaskStrategy::MaskedPeriphery,
                MaskStrategy::BlurryPatches,
                MaskStrategy::BlurryPeriphery,
                MaskStrategy::FovealFilter,
            ][strat];
            let img = noise_image(3, 32, 32, seed_val);
            let plan = MaskPlan::new(strategy, ratio).with_seed(seed_val ^ 0xabcd);
            let (o1, w1) = apply_plan(&img, &plan).unwrap();
            let (o2, w2) = apply_plan(&img, &plan).unwrap();
            prop_assert_eq!(&o1, &o2);
            prop_assert_eq!(&w1, &w2);
            for v in o1.data().iter() {
                prop_assert!((0.0..=1.0).contains(v));
            }
            for y in 0..32 {
                for x in 0..32 {
                    if w1.get(y, x) == 0.0 {
                        for c in 0..3 {
                            prop_assert_eq!(o1.get(c, y, x), img.get(c, y, x));
                        }
                    }
                }
            }
        }
    }
}
