//! Randomized runs with the per-step inversion scan switched on. Any
//! accepted state with a non-positive simplex fails the run.

use diffgrid::imagewarp::{compact, CompactConfig, RasterImage};
use diffgrid::optim::AdamHyper;
use diffgrid::uv::{height_field_mesh, optimize_uv};
use diffgrid::*;
use proptest::prelude::*;

fn toy_kind(i: usize) -> EnergyKind<f64> {
    [EnergyKind::LX, EnergyKind::LXY, EnergyKind::spin()][i]
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    #[test]
    fn toy_runs_stay_injective(
        res in 3usize..10,
        kind in 0usize..3,
        per_dim in any::<bool>(),
        direct in any::<bool>(),
        lr in prop::sample::select(vec![1e-3, 1e-2, 5e-2]),
        noise in 0.0f64..0.5,
        seed in 0u64..1000,
    ) {
        let config = OptConfig {
            adam: AdamHyper::new(lr),
            weight_mode: if per_dim { WeightMode::PerDimension } else { WeightMode::PerVertex },
            parameterization: if direct { Parameterization::Direct } else { Parameterization::ConvexSum },
            init_noise: noise,
            seed,
            verify_each_step: true,
            ..OptConfig::new(300)
        };
        let (complex, result) = optimize_toy(toy_kind(kind), res, &config).unwrap();
        prop_assert!(result.injective);
        prop_assert!(complex.is_injective(&result.positions));
    }

    #[test]
    fn line_search_runs_stay_injective(res in 3usize..8, kind in 0usize..3, seed in 0u64..1000) {
        let config = OptConfig {
            schedule: Schedule::line_search(),
            weight_mode: WeightMode::PerDimension,
            seed,
            init_noise: 0.2,
            verify_each_step: true,
            ..OptConfig::new(60)
        };
        let (complex, result) = optimize_toy(toy_kind(kind), res, &config).unwrap();
        prop_assert!(complex.is_injective(&result.positions));
    }

    #[test]
    fn uv_runs_stay_injective(
        n in 4usize..9,
        jitter in 0.0f64..0.4,
        kind in 0usize..5,
        direct in any::<bool>(),
        lr in prop::sample::select(vec![1e-3, 1e-2]),
        seed in 0u64..1000,
    ) {
        let mesh = height_field_mesh(n, jitter, seed).unwrap();
        let config = OptConfig {
            adam: AdamHyper::new(lr),
            parameterization: if direct { Parameterization::Direct } else { Parameterization::ConvexSum },
            seed,
            verify_each_step: true,
            ..OptConfig::new(200)
        };
        let r = optimize_uv(&mesh, EnergyKind::<f64>::UV_KINDS[kind], &config).unwrap();
        prop_assert_eq!(r.flipped, 0);
        for p in &r.uv {
            prop_assert!(p[0].is_finite() && p[1].is_finite());
        }
    }

    #[test]
    fn compaction_runs_stay_injective(
        grid in 3usize..9,
        freq in 1.0f64..6.0,
        blur in any::<bool>(),
        seed in 0u64..1000,
    ) {
        let target = RasterImage::from_fn(16, 20, |r, c| {
            let (x, y) = (c as f64 / 19.0, r as f64 / 15.0);
            [(freq * x).sin().abs(), (freq * y * x).cos().abs(), ((x - y) * freq).sin() * 0.5 + 0.5]
        }).unwrap();
        let config = CompactConfig {
            iterations: 40,
            samples: 256,
            blur,
            seed,
            verify_each_step: true,
            ..CompactConfig::default()
        };
        let r = compact(&target, grid, grid + 1, &config).unwrap();
        prop_assert!(r.image.is_injective().unwrap());
    }
}
