use lidarup::denoiser::{time_embed, Denoiser, DenoiserConfig, LayerPath, VoxelFeatureGrid, POS_FEATURES};
use lidarup::geometry::{voxelize, Point3, PointCloud, SceneBounds};
use lidarup::nn::Activation;
use lidarup::seed::rng;
use rand::seq::SliceRandom;
use rand::Rng;

fn bounds() -> SceneBounds {
    SceneBounds::new([-2.0, -2.0, -1.0], [2.0, 2.0, 1.0]).unwrap()
}

fn desk(seed: u64) -> Denoiser {
    Denoiser::new(DenoiserConfig::desk(bounds()), seed).unwrap()
}

fn cloud(n: usize, seed: u64) -> PointCloud {
    let mut r = rng(seed);
    PointCloud::new(
        (0..n)
            .map(|_| [r.random_range(-1.9..1.9), r.random_range(-1.9..1.9), r.random_range(-0.9..0.9)])
            .collect(),
    )
    .unwrap()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn empty_grid(model: &Denoiser) -> VoxelFeatureGrid {
    let cfg = model.config();
    let n = cfg.grid.num_voxels();
    VoxelFeatureGrid {
        resolution: cfg.grid.resolution,
        channels: cfg.voxel_channels,
        features: vec![0.0; n * cfg.voxel_channels],
        occupancy: vec![false; n],
    }
}

#[test]
fn time_embedding_properties() {
    for dim in [16, 64] {
        let e0 = time_embed(0, dim);
        assert_eq!(e0.len(), dim);
        for pair in e0.chunks(2) {
            assert_eq!(pair, [0.0, 1.0]);
        }
        let all: Vec<Vec<f64>> = (0..1000).map(|t| time_embed(t, dim)).collect();
        assert!(all.iter().flatten().all(|v| (-1.0..=1.0).contains(v)));
        for a in 0..1000 {
            for b in a + 1..1000 {
                assert!(max_abs_diff(&all[a], &all[b]) > 1e-6, "t={a} and t={b} collide at dim {dim}");
            }
        }
    }
}

#[test]
fn voxel_init_of_out_of_bounds_cloud_is_empty() {
    let model = desk(1);
    let far = PointCloud::new(vec![[10.0, 0.0, 0.0], [0.0, -9.0, 0.0]]).unwrap();
    let assign = voxelize(&far, &model.config().grid).unwrap();
    let grid = model.init_voxel_features(&far, &assign, 10).unwrap();
    assert!(grid.features.iter().all(|&v| v == 0.0));
    assert!(grid.occupancy.iter().all(|&o| !o));
}

#[test]
fn voxel_init_mean_ignores_duplicates() {
    let model = desk(2);
    let p = [0.31, -0.52, 0.1];
    let one = PointCloud::new(vec![p]).unwrap();
    let two = PointCloud::new(vec![p, p]).unwrap();
    let spec = &model.config().grid;
    let g1 = model.init_voxel_features(&one, &voxelize(&one, spec).unwrap(), 7).unwrap();
    let g2 = model.init_voxel_features(&two, &voxelize(&two, spec).unwrap(), 7).unwrap();
    assert_eq!(g1, g2);
    assert_eq!(g1.occupancy.iter().filter(|&&o| o).count(), 1);
}

#[test]
fn voxel_init_is_bit_identical_under_permutation() {
    let model = desk(3);
    let spec = &model.config().grid;
    for seed in 0..10 {
        // Few voxels, many points each, so summation order matters.
        let mut r = rng(100 + seed);
        let pts: Vec<Point3> = (0..400)
            .map(|_| [r.random_range(-0.3..0.3), r.random_range(-0.3..0.3), r.random_range(-0.2..0.2)])
            .collect();
        let a = PointCloud::new(pts.clone()).unwrap();
        let mut shuffled = pts;
        shuffled.shuffle(&mut r);
        let b = PointCloud::new(shuffled).unwrap();
        let ga = model.init_voxel_features(&a, &voxelize(&a, spec).unwrap(), 500).unwrap();
        let gb = model.init_voxel_features(&b, &voxelize(&b, spec).unwrap(), 500).unwrap();
        assert_eq!(ga, gb, "seed {seed}");
    }
}

#[test]
fn completion_preserves_shape_and_maps_zero_to_zero() {
    let model = desk(4);
    let zero = empty_grid(&model);
    let out = model.voxel_completion(&zero).unwrap();
    assert_eq!(out.features.len(), zero.features.len());
    assert_eq!(out.resolution, zero.resolution);
    assert!(out.features.iter().all(|&v| v == 0.0));

    let c = cloud(300, 4);
    let grid = model.init_voxel_features(&c, &voxelize(&c, &model.config().grid).unwrap(), 20).unwrap();
    let out = model.voxel_completion(&grid).unwrap();
    assert_eq!(out.features.len(), grid.features.len());
}

#[test]
fn completion_fills_a_zero_voxel_next_to_an_occupied_one() {
    let mut filled = 0;
    for seed in 0..20 {
        let model = desk(seed);
        let spec = model.config().grid;
        let mut grid = empty_grid(&model);
        let src = spec.linear_index([16, 16, 4]);
        let dst = spec.linear_index([17, 16, 4]);
        let mut r = rng(1000 + seed);
        for c in 0..grid.channels {
            grid.features[src * grid.channels + c] = r.random_range(-1.0..1.0);
        }
        grid.occupancy[src] = true;
        grid.occupancy[dst] = true;
        let out = model.voxel_completion(&grid).unwrap();
        if out.voxel(dst).iter().any(|&v| v != 0.0) {
            filled += 1;
        }
    }
    assert!(filled >= 19, "only {filled}/20 seeds filled the empty voxel");
}

#[test]
fn unet_shape_zero_and_receptive_field() {
    let model = desk(5);
    let spec = model.config().grid;
    let zero = empty_grid(&model);
    let out = model.planar_unet(&zero).unwrap();
    assert_eq!(out.features.len(), zero.features.len());
    assert!(out.features.iter().all(|&v| v == 0.0));

    let c = cloud(500, 5);
    let base = model.init_voxel_features(&c, &voxelize(&c, &spec).unwrap(), 30).unwrap();
    let mut poked = base.clone();
    let v = spec.linear_index([10, 10, 3]);
    poked.features[v * poked.channels] += 0.5;
    let (a, b) = (model.planar_unet(&base).unwrap(), model.planar_unet(&poked).unwrap());
    let changed_elsewhere = (0..spec.num_voxels()).any(|l| {
        let [x, y, _] = spec.unravel(l);
        (x, y) != (10, 10) && max_abs_diff(a.voxel(l), b.voxel(l)) > 0.0
    });
    assert!(changed_elsewhere);
}

#[test]
fn condition_encoder_is_permutation_equivariant() {
    let model = desk(6);
    let c = cloud(64, 6);
    let feats = model.encode_condition(&c);
    assert_eq!(feats.rows, 64);
    assert_eq!(feats.cols, model.config().cond_channels[3]);
    let mut order: Vec<usize> = (0..64).collect();
    order.shuffle(&mut rng(6));
    let permuted = model.encode_condition(&c.select(&order));
    for (new_row, &old_row) in order.iter().enumerate() {
        assert_eq!(permuted.row(new_row), feats.row(old_row));
    }
    let origin = PointCloud::new(vec![[0.0; 3]; 5]).unwrap();
    assert!(model.encode_condition(&origin).data.iter().all(|v| v.is_finite()));
}

#[test]
fn null_condition_is_zero_and_changes_the_prediction() {
    let model = desk(7);
    let cond = cloud(128, 7);
    let null = model.null_condition(128);
    let real = model.encode_condition(&cond);
    assert_eq!((null.rows, null.cols), (real.rows, real.cols));
    assert!(null.data.iter().all(|&v| v == 0.0));

    let noisy = cloud(256, 70);
    let a = model.denoise(&noisy, Some(&cond), 100).unwrap();
    let b = model.denoise(&noisy, None, 100).unwrap();
    assert!(max_abs_diff(&a.flat(), &b.flat()) > 1e-9);
}

#[test]
fn match_features_use_nearest_sparse_point() {
    let model = desk(8);
    let input = cloud(300, 8);
    let sparse = cloud(40, 80);
    let feats = model.encode_condition(&sparse);
    let (m, idx) = model.match_features(&input, &sparse, &feats).unwrap();
    assert_eq!((m.rows, m.cols), (300, 64));
    for (i, p) in input.points().iter().enumerate() {
        let d = |q: &Point3| (0..3).map(|a| (p[a] - q[a]).powi(2)).sum::<f64>();
        let best = (0..sparse.len()).min_by(|&a, &b| d(&sparse.points()[a]).total_cmp(&d(&sparse.points()[b]))).unwrap();
        assert_eq!(idx[i], best);
    }

    let single = PointCloud::new(vec![[0.1, 0.2, 0.3]]).unwrap();
    let f1 = model.encode_condition(&single);
    let (m1, idx1) = model.match_features(&input, &single, &f1).unwrap();
    assert!(idx1.iter().all(|&i| i == 0));
    assert!((1..300).all(|r| m1.row(r) == m1.row(0)));
}

#[test]
fn positional_features_are_consistent() {
    let model = desk(9);
    let noisy = cloud(200, 9);
    let cond = cloud(50, 90);
    let b = model.interaction_bundle(&noisy, Some(&cond), 300).unwrap();
    let k = model.config().neighbors;
    assert_eq!(b.f_pos.cols, POS_FEATURES);
    assert_eq!(b.f_pos.rows, 200 * k);
    let spec = model.config().grid;
    for r in 0..b.f_pos.rows {
        let f = b.f_pos.row(r);
        let point = noisy.points()[r / k];
        let center = spec.center_unchecked(spec.unravel(b.neighbor_voxels[r]));
        for a in 0..3 {
            assert_eq!(f[a], center[a]);
            assert_eq!(f[3 + a], point[a]);
            // Offset points from the point to the voxel center.
            assert_eq!(f[6 + a], center[a] - point[a]);
        }
        let norm2 = f[6] * f[6] + f[7] * f[7] + f[8] * f[8];
        assert!((f[9] - norm2).abs() < 1e-6);
    }
    assert_eq!(b.eps.len(), 200);
}

#[test]
fn split_hybrid_layer_matches_the_materialized_concatenation() {
    let model = desk(10);
    let noisy = cloud(150, 10);
    let cond = cloud(40, 100);
    let b = model.interaction_bundle(&noisy, Some(&cond), 600).unwrap();
    let (w1, b1) = model.hybrid_weight_matrix();
    assert_eq!(w1.cols, b.f_hybr.cols);
    let params = model.params();
    let get = |name: &str| params.get(params.find(name).unwrap());
    let dense = |x: &[f64], w: &str, bias: &str| -> Vec<f64> {
        let (w, bias) = (get(w), get(bias));
        let (dout, din) = (w.shape[0], w.shape[1]);
        (0..dout).map(|o| bias.data[o] + (0..din).map(|i| w.data[o * din + i] * x[i]).sum::<f64>()).collect()
    };
    let leaky = |v: Vec<f64>| v.into_iter().map(|x| Activation::LeakyRelu.apply(x)).collect::<Vec<_>>();

    let k = b.k;
    let cv = b.f_group.cols;
    let mut eps = Vec::new();
    for i in 0..b.points {
        let mut agg = vec![0.0; cv];
        for j in 0..k {
            let r = i * k + j;
            let x = b.f_hybr.row(r);
            let h: Vec<f64> = (0..w1.rows)
                .map(|o| b1[o] + (0..w1.cols).map(|c| w1.data[o * w1.cols + c] * x[c]).sum::<f64>())
                .collect();
            let w = dense(&leaky(h), "weight.l2.weight", "weight.l2.bias");
            assert!(max_abs_diff(&w, b.weights.row(r)) < 1e-9);
            for c in 0..cv {
                agg[c] += w[c] * b.f_group.row(r)[c] / k as f64;
            }
        }
        let h = leaky(dense(&agg, "head.l1.weight", "head.l1.bias"));
        eps.extend(dense(&h, "head.l2.weight", "head.l2.bias"));
    }
    assert!(max_abs_diff(&eps, &b.eps.flat()) < 1e-9);
}

#[test]
fn prediction_is_translation_invariant_without_absolute_coordinates() {
    let mut cfg = DenoiserConfig::desk(bounds());
    cfg.absolute_coords = false;
    let model = Denoiser::new(cfg.clone(), 11).unwrap();
    let noisy = cloud(300, 11);
    let cond = cloud(60, 110);
    // Whole voxels, so every point keeps its cell.
    let size = cfg.grid.voxel_size();
    let shift = [3.0 * size[0], -5.0 * size[1], 2.0 * size[2]];
    let mut moved_cfg = cfg.clone();
    moved_cfg.grid.bounds = cfg.grid.bounds.translated(shift);
    let mut moved = Denoiser::new(moved_cfg, 11).unwrap();
    *moved.params_mut() = model.params().clone();

    let a = model.interaction_bundle(&noisy, Some(&cond), 250).unwrap();
    let b = moved.interaction_bundle(&noisy.translated(shift), Some(&cond.translated(shift)), 250).unwrap();
    assert_eq!(a.neighbor_voxels, b.neighbor_voxels);
    for r in 0..a.f_pos.rows {
        assert!(max_abs_diff(&a.f_pos.row(r)[6..], &b.f_pos.row(r)[6..]) < 1e-9);
    }
    assert!(max_abs_diff(&a.eps.flat(), &b.eps.flat()) < 1e-9);

    // With coordinates on, the coordinate blocks move by the shift and the offsets do not.
    let abs = Denoiser::new(DenoiserConfig::desk(bounds()), 11).unwrap();
    let mut abs_moved_cfg = DenoiserConfig::desk(bounds());
    abs_moved_cfg.grid.bounds = bounds().translated(shift);
    let abs_moved = Denoiser::new(abs_moved_cfg, 11).unwrap();
    let a = abs.interaction_bundle(&noisy, Some(&cond), 250).unwrap();
    let b = abs_moved.interaction_bundle(&noisy.translated(shift), Some(&cond.translated(shift)), 250).unwrap();
    for r in 0..a.f_pos.rows {
        let (fa, fb) = (a.f_pos.row(r), b.f_pos.row(r));
        for c in 0..6 {
            assert!((fb[c] - fa[c] - shift[c % 3]).abs() < 1e-9);
        }
        assert!(max_abs_diff(&fa[6..], &fb[6..]) < 1e-9);
    }
}

#[test]
fn denoise_is_permutation_equivariant_and_deterministic() {
    let model = desk(12);
    let noisy = cloud(256, 12);
    let cond = cloud(64, 120);
    let eps = model.denoise(&noisy, Some(&cond), 40).unwrap();
    assert_eq!(eps, model.denoise(&noisy, Some(&cond), 40).unwrap());
    let mut order: Vec<usize> = (0..256).collect();
    order.shuffle(&mut rng(12));
    let permuted = model.denoise(&noisy.select(&order), Some(&cond), 40).unwrap();
    for (new_row, &old_row) in order.iter().enumerate() {
        assert_eq!(permuted.values[new_row], eps.values[old_row]);
    }
}

#[test]
fn random_models_give_finite_predictions() {
    for seed in 0..100 {
        let model = desk(seed);
        let noisy = cloud(128, 5000 + seed);
        let cond = cloud(32, 6000 + seed);
        let t = (seed as usize * 37) % 1000;
        let eps = model.denoise(&noisy, if seed % 2 == 0 { Some(&cond) } else { None }, t).unwrap();
        assert_eq!(eps.len(), 128);
        assert!(eps.flat().iter().all(|v| v.is_finite()), "seed {seed}");
    }
}

#[test]
fn structural_audit() {
    let model = desk(13);
    let audit = model.audit();
    assert!(audit.passes());
    assert_eq!(audit.normalization_layers, 0);
    assert_eq!(audit.biased_completion_convs, 0);
    // Stem plus three blocks of three paths and a projection.
    assert_eq!(audit.completion_convs, 13);
    assert!(model.manifest().iter().filter(|l| l.path == LayerPath::Completion).all(|l| !l.bias));
    let names: Vec<&str> = model.params().iter().map(|t| t.name.as_str()).collect();
    assert!(!names.iter().any(|n| n.contains("norm") || n.contains("bn")));
    assert!(!names.iter().any(|n| n.starts_with("completion") && n.ends_with("bias")));
}

#[test]
fn mismatched_grid_is_rejected() {
    let model = desk(14);
    let mut grid = empty_grid(&model);
    grid.resolution = [8, 8, 4];
    assert!(model.voxel_completion(&grid).is_err());
    assert!(model.planar_unet(&grid).is_err());
}
