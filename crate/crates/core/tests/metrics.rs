mod common;

use common::{oracle_chamfer, oracle_rcd, random_cloud};
use lidarup::geometry::{Point3, PointCloud};
use lidarup::metrics::{chamfer, evaluate, fscore, rcd, rcd_detailed, RcdConfig};
use lidarup::seed::rng;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn cloud(v: &[Point3]) -> PointCloud {
    PointCloud::new(v.to_vec()).unwrap()
}

#[test]
fn metrics_match_exhaustive_oracle_on_50_instances() {
    let mut r = rng(2024);
    for inst in 0..50 {
        let np = r.random_range(1..=512);
        let nq = r.random_range(64..=512);
        let p = random_cloud(&mut r, np, 3.0);
        let q = random_cloud(&mut r, nq, 3.0);
        let cfg = RcdConfig { seed: inst, ..RcdConfig::default() };
        let got = chamfer(&cloud(&p), &cloud(&q)).unwrap();
        assert!((got - oracle_chamfer(&p, &q)).abs() < 1e-9, "instance {inst}");
        let (a, b, c) = rcd(&cloud(&p), &cloud(&q), &cfg).unwrap();
        let (oa, ob, oc) = oracle_rcd(&p, &q, &cfg);
        assert!((a - oa).abs() < 1e-9 && (b - ob).abs() < 1e-9 && (c - oc).abs() < 1e-9, "instance {inst}");
    }
}

#[test]
fn identical_clouds_score_perfectly() {
    let mut r = rng(1);
    let p = cloud(&random_cloud(&mut r, 300, 5.0));
    let rep = evaluate(&p, &p, &RcdConfig::default(), 0.2).unwrap();
    assert_eq!(rep.cd, 0.0);
    assert_eq!((rep.rcd, rep.recon_rcd, rep.match_rcd), (0.0, 0.0, 0.0));
    assert_eq!(rep.fscore, 1.0);
}

#[test]
fn region_accounting_at_defaults() {
    let mut r = rng(5);
    let p = cloud(&random_cloud(&mut r, 2000, 5.0));
    let q = cloud(&random_cloud(&mut r, 4000, 5.0));
    let b = rcd_detailed(&p, &q, &RcdConfig::default()).unwrap();
    assert_eq!(b.centers.len(), 64);
    assert_eq!(b.targets_per_group, 32);
    assert_eq!((b.recon_groups.len(), b.match_groups.len()), (20, 44));
    let mut all: Vec<usize> = b.recon_groups.iter().chain(&b.match_groups).copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..64).collect::<Vec<_>>());
    assert_eq!(b.predicted_per_group, 32);
}

#[test]
fn report_is_deterministic_and_consistent() {
    let mut r = rng(8);
    let p = cloud(&random_cloud(&mut r, 400, 2.0));
    let q = cloud(&random_cloud(&mut r, 500, 2.0));
    let cfg = RcdConfig { seed: 3, ..RcdConfig::default() };
    let a = evaluate(&p, &q, &cfg, 0.25).unwrap();
    let b = evaluate(&p, &q, &cfg, 0.25).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.cd, chamfer(&p, &q).unwrap());
    assert_eq!((a.rcd, a.recon_rcd, a.match_rcd), rcd(&p, &q, &cfg).unwrap());
    assert_eq!(a.fscore, fscore(&p, &q, 0.25).unwrap());
    assert_eq!((a.cd_unit.as_str(), a.rcd_unit.as_str()), ("m^2", "m"));
    let json = serde_json::to_value(&a).unwrap();
    assert_eq!(json["fscore_threshold_m"], 0.25);
    assert_eq!(json["rcd_config"]["seed"], 3);
}

fn rot_z(p: Point3, th: f64) -> Point3 {
    let (s, c) = th.sin_cos();
    [c * p[0] - s * p[1], s * p[0] + c * p[1], p[2]]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn chamfer_symmetric(seed in any::<u64>(), np in 1usize..60, nq in 1usize..60) {
        let mut r = rng(seed);
        let p = cloud(&random_cloud(&mut r, np, 4.0));
        let q = cloud(&random_cloud(&mut r, nq, 4.0));
        prop_assert_eq!(chamfer(&p, &q).unwrap(), chamfer(&q, &p).unwrap());
    }

    #[test]
    fn chamfer_rigid_invariant(seed in any::<u64>(), th in -3.0f64..3.0, t in prop::array::uniform3(-10.0f64..10.0)) {
        let mut r = rng(seed);
        let p = random_cloud(&mut r, 40, 4.0);
        let q = random_cloud(&mut r, 50, 4.0);
        let move_all = |v: &[Point3]| cloud(&v.iter().map(|&x| { let y = rot_z(x, th); [y[0] + t[0], y[1] + t[1], y[2] + t[2]] }).collect::<Vec<_>>());
        let a = chamfer(&cloud(&p), &cloud(&q)).unwrap();
        let b = chamfer(&move_all(&p), &move_all(&q)).unwrap();
        prop_assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn rcd_order_invariant(seed in any::<u64>()) {
        let mut r = rng(seed);
        let mut p = random_cloud(&mut r, 150, 3.0);
        let mut q = random_cloud(&mut r, 200, 3.0);
        let cfg = RcdConfig { groups: 8, targets_per_group: 10, recon_groups: 3, match_groups: 5, seed: 4 };
        let a = rcd(&cloud(&p), &cloud(&q), &cfg).unwrap();
        p.shuffle(&mut r);
        q.shuffle(&mut r);
        prop_assert_eq!(a, rcd(&cloud(&p), &cloud(&q), &cfg).unwrap());
    }

    #[test]
    fn fscore_in_unit_interval(seed in any::<u64>(), t in 0.01f64..3.0) {
        let mut r = rng(seed);
        let p = cloud(&random_cloud(&mut r, 30, 2.0));
        let q = cloud(&random_cloud(&mut r, 30, 2.0));
        let f = fscore(&p, &q, t).unwrap();
        prop_assert!((0.0..=1.0).contains(&f));
    }
}
