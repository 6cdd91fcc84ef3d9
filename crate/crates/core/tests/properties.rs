use olus_core::assignment::{average_precision, hungarian_min_cost, ApInput, CostMatrix, Detection, Interpolation};
use olus_core::geometry::{chamfer, directed_hausdorff, discrete_frechet};
use olus_core::io;
use olus_core::losses::{dice_loss, focal_loss_binary, FocalParams, SoftMask};
use olus_core::metrics::{evaluate, olus, MetricConfig};
use olus_core::model::{BevGridSpec, Point3};
use olus_core::raster::{rasterize_polyline, BevMask};
use olus_core::synthetic::{generate_scene, perturb, PerturbationSpec, SceneSpec};
use proptest::prelude::*;

fn point() -> impl Strategy<Value = Point3> {
    (-40.0..40.0f64, -20.0..20.0f64, -2.0..2.0f64).prop_map(|(x, y, z)| Point3::new(x, y, z))
}

fn curve() -> impl Strategy<Value = Vec<Point3>> {
    prop::collection::vec(point(), 1..12)
}

fn dist(a: &Point3, b: &Point3) -> f64 {
    ((a.x - b.x).powi(2) + (a.y - b.y).powi(2) + (a.z - b.z).powi(2)).sqrt()
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn frechet_metric_properties(a in curve(), b in curve(), t in point()) {
        let d = discrete_frechet(&a, &b).unwrap();
        prop_assert!((d - discrete_frechet(&b, &a).unwrap()).abs() < 1e-12);
        let shift = |c: &[Point3]| c.iter().map(|p| Point3::new(p.x + t.x, p.y + t.y, p.z + t.z)).collect::<Vec<_>>();
        prop_assert!((d - discrete_frechet(&shift(&a), &shift(&b)).unwrap()).abs() < 1e-9);
        let ends = dist(&a[0], &b[0]).max(dist(a.last().unwrap(), b.last().unwrap()));
        prop_assert!(d >= ends - 1e-12);
        let h = directed_hausdorff(&a, &b).unwrap().max(directed_hausdorff(&b, &a).unwrap());
        prop_assert!(d >= h - 1e-12);
        prop_assert_eq!(discrete_frechet(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn chamfer_symmetry(a in curve(), b in curve()) {
        let ab = chamfer(&a, &b).unwrap();
        let ba = chamfer(&b, &a).unwrap();
        prop_assert!((ab.symmetric - ba.symmetric).abs() < 1e-12);
        prop_assert!((ab.forward - ba.backward).abs() < 1e-12);
        prop_assert!(ab.symmetric <= discrete_frechet(&a, &b).unwrap() + 1e-12);
    }

    #[test]
    fn hungarian_is_optimal(n in 1usize..6, cells in prop::collection::vec(0.0..100.0f64, 36), shift in 0.0..50.0f64) {
        let m = CostMatrix::from_fn(n, n, |i, j| cells[i * 6 + j]);
        let a = hungarian_min_cost(&m).unwrap();
        prop_assert_eq!(a.pairs.len(), n);
        let best = permutations(n)
            .into_iter()
            .map(|p| p.iter().enumerate().map(|(i, &j)| m.get(i, j)).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        prop_assert!((a.cost - best).abs() < 1e-9);
        let shifted = CostMatrix::from_fn(n, n, |i, j| cells[i * 6 + j] + if i == 0 { shift } else { 0.0 });
        let b = hungarian_min_cost(&shifted).unwrap();
        prop_assert!((b.cost - a.cost - shift).abs() < 1e-9);
    }

    #[test]
    fn hungarian_rectangular(rows in 1usize..5, cols in 1usize..5, cells in prop::collection::vec(0.0..10.0f64, 16)) {
        let m = CostMatrix::from_fn(rows, cols, |i, j| cells[i * 4 + j]);
        let a = hungarian_min_cost(&m).unwrap();
        prop_assert_eq!(a.pairs.len(), rows.min(cols));
        let mut used = vec![false; cols];
        for &(i, j) in &a.pairs {
            prop_assert!(i < rows && !used[j]);
            used[j] = true;
        }
    }

    #[test]
    fn ap_properties(dets in prop::collection::vec((0.0..1.0f64, any::<bool>()), 0..30), extra in 0usize..5, rot in 0usize..30) {
        let tps = dets.iter().filter(|d| d.1).count();
        let list: Vec<Detection> = dets.iter().map(|&(c, t)| Detection::new(c, t)).collect();
        let input = ApInput::new(list.clone(), tps + extra).unwrap();
        let ap = average_precision(&input, Interpolation::AllPoint);
        prop_assert!((0.0..=1.0).contains(&ap));
        let mut rotated = list.clone();
        if !rotated.is_empty() {
            let k = rot % rotated.len();
            rotated.rotate_left(k);
        }
        let ap2 = average_precision(&ApInput::new(rotated, tps + extra).unwrap(), Interpolation::AllPoint);
        prop_assert!((ap - ap2).abs() < 1e-12);
        // Turning a false positive into a true positive never lowers AP.
        if let Some(i) = list.iter().position(|d| !d.true_positive) {
            let mut better = list.clone();
            better[i].true_positive = true;
            let ap3 = average_precision(&ApInput::new(better, tps + extra + 1).unwrap(), Interpolation::AllPoint);
            let ap_same_gt = average_precision(&ApInput::new(list.clone(), tps + extra + 1).unwrap(), Interpolation::AllPoint);
            prop_assert!(ap3 >= ap_same_gt - 1e-12);
        }
    }

    #[test]
    fn supercover_refines(a in point(), b in point(), c in point()) {
        let coarse = BevGridSpec::default();
        let fine = BevGridSpec::high_res();
        let pts = [a, b, c];
        let lo = rasterize_polyline(&pts, &coarse);
        let hi = rasterize_polyline(&pts, &fine);
        let mut down = BevMask::new(&coarse);
        for (r, c) in hi.marked_cells() {
            down.set(r / 2, c / 2);
        }
        prop_assert_eq!(down, lo);
    }

    #[test]
    fn focal_reduces_to_half_bce(data in prop::collection::vec((0.01..0.99f64, any::<bool>()), 1..40)) {
        let probs: Vec<f64> = data.iter().map(|d| d.0).collect();
        let targets: Vec<bool> = data.iter().map(|d| d.1).collect();
        let f = focal_loss_binary(&probs, &targets, &FocalParams { alpha: 0.5, gamma: 0.0 }).unwrap();
        let bce = data
            .iter()
            .map(|&(p, t)| -(if t { p } else { 1.0 - p }).ln())
            .sum::<f64>()
            / data.len() as f64;
        prop_assert!((f - 0.5 * bce).abs() < 1e-12);
    }

    #[test]
    fn dice_in_unit_interval(vals in prop::collection::vec(0.0..=1.0f64, 200), marks in prop::collection::vec(any::<bool>(), 200)) {
        let spec = BevGridSpec::default().with_resolution(10, 20);
        let mut gt = BevMask::new(&spec);
        for (k, &m) in marks.iter().enumerate() {
            if m {
                gt.set(k / 20, k % 20);
            }
        }
        let pred = SoftMask { rows: 10, cols: 20, data: vals };
        let d = dice_loss(&pred, &gt).unwrap();
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert!(dice_loss(&SoftMask::from(&gt), &gt).unwrap().abs() < 1e-12);
    }

    #[test]
    fn olus_bounds(v in prop::array::uniform5(0.0..=1.0f64)) {
        let o = olus(v[0], v[1], v[2], v[3], v[4]).unwrap();
        prop_assert!((0.0..=1.0).contains(&o));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn report_is_self_consistent(seed in 0u64..1000, jitter in 0.0..1.5f64, drop in 0.0..0.5f64, flip in 0.0..0.5f64) {
        let gt = generate_scene(&SceneSpec { frames: 2, seed, ..Default::default() });
        let p = perturb(&gt, &PerturbationSpec {
            point_jitter_sigma: jitter,
            drop_rate: drop,
            topology_flip_rate: flip,
            false_positive_count: 1,
            confidence_noise: 0.2,
            seed: seed + 1,
            ..Default::default()
        }).unwrap();
        let pairs = io::pair_scene(&gt, &p.archive).unwrap();
        let r = evaluate(&pairs, &MetricConfig::default(), 1).unwrap();
        prop_assert!((r.olus - r.recomputed_olus().unwrap()).abs() <= 1e-12);
        let back = io::report_from_json(&io::report_to_json(&r)).unwrap();
        prop_assert!((back.olus - r.olus).abs() <= 1e-9);
        prop_assert_eq!(evaluate(&pairs, &MetricConfig::default(), 3).unwrap(), r);
    }
}

#[test]
fn generation_is_seed_deterministic() {
    let spec = SceneSpec {
        frames: 3,
        seed: 77,
        ..Default::default()
    };
    assert_eq!(generate_scene(&spec), generate_scene(&spec));
    let other = generate_scene(&SceneSpec {
        seed: 78,
        ..spec.clone()
    });
    assert_ne!(generate_scene(&spec), other);
    let pspec = PerturbationSpec {
        point_jitter_sigma: 0.5,
        drop_rate: 0.1,
        topology_flip_rate: 0.1,
        seed: 3,
        ..Default::default()
    };
    let gt = generate_scene(&spec);
    assert_eq!(perturb(&gt, &pspec).unwrap(), perturb(&gt, &pspec).unwrap());
}
