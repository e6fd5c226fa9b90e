use proptest::prelude::*;
use sirlab::diffops::{hybrid_forward, noise_add, noise_add_with, predict_x0, DiffusionState};
use sirlab::meshx::{marching_cubes_field, sample_density};
use sirlab::scene::{Camera, FlatlandGrid, Scene, VoxelGrid};
use sirlab::schedule::{subsample_ladder, t1_from_t2, t2_at, AnnealPlan, NoiseSchedule, T1Rule, TimestepLadder};
use sirlab::scoremodel::{
    empirical_eps, Condition, Dataset, EmpiricalScoreModel, EpsilonModel, FnPredictor, Guided, SingleGaussianModel,
};
use sirlab::sirloop::{run_sir, LinearCodec, OracleTask, SirConfig};
use sirlab::tasks::{flatland_task, TaskShape};
use sirlab::seeded_rng;

fn cube(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, n * n * n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn schedules_are_variance_preserving(
        steps in 2usize..2000,
        lo in 1e-5f64..1e-3,
        span in 1e-3f64..0.05,
    ) {
        let s = NoiseSchedule::vp_linear(steps, lo, lo + span).unwrap();
        prop_assert_eq!(s.alpha(0), 1.0);
        prop_assert_eq!(s.sigma(0), 0.0);
        for t in 0..=steps {
            prop_assert!((s.alpha(t).powi(2) + s.sigma(t).powi(2) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn t1_never_exceeds_t2(t2 in 0usize..=1000, c in 0.0f64..1.0) {
        for rule in [T1Rule::Ratio(c), T1Rule::SquareOverT] {
            let plan = AnnealPlan::linear(0.8, 0.2, rule);
            prop_assert!(t1_from_t2(t2, &plan, 1000) <= t2);
        }
    }

    #[test]
    fn linear_anneal_descends_to_its_endpoints(k_total in 2usize..60, start in 0.5f64..0.95, drop in 0.0f64..0.45) {
        let end = start - drop;
        prop_assume!(end > 0.05);
        let plan = AnnealPlan::linear(start, end, T1Rule::Ratio(0.6));
        let ladder = TimestepLadder::even(1000, 1000).unwrap();
        let mut rng = seeded_rng(0);
        let seq: Vec<usize> = (0..k_total).map(|k| t2_at(k, k_total, &plan, &ladder, &mut rng).unwrap()).collect();
        prop_assert!(seq.windows(2).all(|w| w[1] <= w[0]));
        prop_assert_eq!(seq[0], ladder.snap(start * 1000.0));
        prop_assert_eq!(*seq.last().unwrap(), ladder.snap(end * 1000.0));
    }

    #[test]
    fn ladders_increase_and_cover_both_ends(steps in 1usize..2000, n in 1usize..400) {
        let l = subsample_ladder(steps, n.min(steps)).unwrap();
        let s = l.steps();
        prop_assert_eq!(s[0], 0);
        prop_assert_eq!(*s.last().unwrap(), steps);
        prop_assert!(s.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn posteriors_normalize_and_stay_in_the_hull(
        pts in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 3), 1..8),
        x in prop::collection::vec(-3.0f64..3.0, 3),
        t in 1usize..1000,
    ) {
        let sched = NoiseSchedule::ddpm_default();
        let d = Dataset::uniform(pts.clone()).unwrap();
        let w = d.posterior(&x, sched.alpha(t), sched.sigma(t));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let m = d.posterior_mean(&x, sched.alpha(t), sched.sigma(t));
        for j in 0..3 {
            let lo = pts.iter().map(|p| p[j]).fold(f64::INFINITY, f64::min);
            let hi = pts.iter().map(|p| p[j]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(m[j] >= lo - 1e-12 && m[j] <= hi + 1e-12);
        }
    }

    #[test]
    fn posterior_mean_collapses_at_small_t(k in 0usize..4, seed in 0u64..1000) {
        let pts = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]];
        let sched = NoiseSchedule::ddpm_default();
        let t = 1;
        let d = Dataset::uniform(pts.clone()).unwrap();
        let noisy = noise_add(&pts[k], t, &sched, &mut seeded_rng(seed)).unwrap();
        let m = d.posterior_mean(&noisy.x, sched.alpha(t), sched.sigma(t));
        prop_assert!(m.iter().zip(&pts[k]).all(|(a, b)| (a - b).abs() < 1e-6));
    }

    #[test]
    fn nfe_counter_matches_scripted_calls(calls in prop::collection::vec((1usize..1000, 0.0f64..5.0), 0..30)) {
        let sched = NoiseSchedule::ddpm_default();
        let model = EmpiricalScoreModel::new(vec![
            Dataset::uniform(vec![vec![0.1, 0.2], vec![0.5, 0.5]]).unwrap(),
            Dataset::uniform(vec![vec![0.9, 0.1]]).unwrap(),
        ]).unwrap();
        let mut expected = 0;
        for (t, scale) in &calls {
            let g = Guided::new(&model, *scale);
            use sirlab::scoremodel::NoisePredictor;
            g.predict_eps(&[0.3, 0.3], *t, 1, &sched).unwrap();
            expected += g.nfe_per_call();
        }
        empirical_eps(&model, &[0.0, 0.0], 10, Condition::unconditional(0), &sched).unwrap();
        prop_assert_eq!(model.nfe(), expected + 1);
    }

    #[test]
    fn exact_noise_recovers_x0(
        x0 in prop::collection::vec(-2.0f64..2.0, 6),
        eps in prop::collection::vec(-3.0f64..3.0, 6),
        t in 1usize..=1000,
    ) {
        let sched = NoiseSchedule::ddpm_default();
        let state = noise_add_with(&x0, &eps, t, &sched);
        let e = eps.clone();
        let pred = FnPredictor(move |_: &[f64], _, _| e.clone());
        let back = predict_x0(&state, &pred, 0, &sched).unwrap();
        let num: f64 = back.iter().zip(&x0).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let den: f64 = x0.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-3);
        prop_assert!(num / den <= 1e-10 + 1e-10 * eps.iter().fold(0.0f64, |m, v| m.max(v.abs())) * sched.sigma(t) / sched.alpha(t) / den,
            "t {} err {}", t, num / den);
    }

    #[test]
    fn hybrid_with_equal_times_is_noise_adding(t in 1usize..1000, seed in 0u64..10_000) {
        let sched = NoiseSchedule::ddpm_default();
        let ladder = TimestepLadder::even(1000, 1000).unwrap();
        let m = SingleGaussianModel::new(vec![0.5; 4], vec![0.1; 4]).unwrap();
        let g = Guided::new(&m, 3.0);
        let x = [0.1, 0.7, 0.3, 0.9];
        let h = hybrid_forward(&x, t, t, &ladder, &g, 0, &sched, &mut seeded_rng(seed)).unwrap();
        let n = noise_add(&x, t, &sched, &mut seeded_rng(seed)).unwrap();
        prop_assert_eq!(h, n);
        prop_assert_eq!(m.nfe(), 0);
    }

    #[test]
    fn renders_stay_in_range(d in cube(6), c in prop::collection::vec(0.0f64..1.0, 3 * 216), az in 0.0f64..6.3, el in -1.0f64..1.0) {
        let g = VoxelGrid::from_parts(6, d.iter().map(|v| 5.0 * v).collect(), c).unwrap();
        let r = g.render(&Camera::with_elevation(az, el));
        prop_assert!(r.alpha.iter().all(|a| (0.0..=1.0).contains(a)));
        prop_assert!(r.image.iter().all(|v| (-1e-12..=1.0 + 1e-12).contains(v)));
        prop_assert_eq!(r.clone(), g.render(&Camera::with_elevation(az, el)));
    }

    #[test]
    fn hidden_density_does_not_show(behind in prop::collection::vec(0.0f64..50.0, 8)) {
        // A wall of huge density in the row nearest the camera hides every
        // cell behind it.
        let n = 8;
        let mut d = vec![0.0; n * n];
        let mut c = vec![0.5; n * n];
        for ix in 0..n {
            d[(n - 1) * n + ix] = 4000.0;
            c[(n - 1) * n + ix] = 0.2;
        }
        let base = FlatlandGrid::from_parts(n, d.clone(), c.clone()).unwrap();
        for (ix, v) in behind.iter().enumerate() {
            d[ix] = *v;
        }
        let changed = FlatlandGrid::from_parts(n, d, c).unwrap();
        let cam = Camera::new(std::f64::consts::PI);
        let a = base.render(&cam);
        let b = changed.render(&cam);
        prop_assert!(a.image.iter().zip(&b.image).all(|(x, y)| (x - y).abs() < 1e-12));
    }

    #[test]
    fn codec_round_trip_is_a_projection(x in prop::collection::vec(0.0f64..1.0, 3 * 64)) {
        let shape = VoxelGrid::new(8).view_shape();
        let codec = LinearCodec::cosine(shape, 4).unwrap();
        let once = codec.decode(&codec.encode(&x));
        let twice = codec.decode(&codec.encode(&once));
        prop_assert!(once.iter().zip(&twice).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn mesh_vertices_sit_on_the_level_set(d in cube(6), thr in 0.2f64..0.8) {
        let mesh = marching_cubes_field(6, &d, None, thr).unwrap();
        for v in &mesh.vertices {
            prop_assert!((sample_density(6, &d, *v) - thr).abs() < 1e-6);
        }
        for t in &mesh.triangles {
            prop_assert!(t[0] != t[1] && t[1] != t[2] && t[0] != t[2]);
            prop_assert!(t.iter().all(|&i| i < mesh.vertices.len()));
        }
    }

    #[test]
    fn shifting_the_grid_shifts_the_mesh(d in cube(6), axis in 0usize..3) {
        // Both copies keep a zero border so the boundary cells match.
        let n = 9;
        let mut a = vec![0.0; n * n * n];
        let mut b = vec![0.0; n * n * n];
        for z in 0..6 {
            for y in 0..6 {
                for x in 0..6 {
                    let v = d[(z * 6 + y) * 6 + x];
                    a[((z + 1) * n + y + 1) * n + x + 1] = v;
                    let (sx, sy, sz) = match axis { 0 => (x + 2, y + 1, z + 1), 1 => (x + 1, y + 2, z + 1), _ => (x + 1, y + 1, z + 2) };
                    b[(sz * n + sy) * n + sx] = v;
                }
            }
        }
        let ma = marching_cubes_field(n, &a, None, 0.5).unwrap();
        let mb = marching_cubes_field(n, &b, None, 0.5).unwrap();
        prop_assert_eq!(ma.vertices.len(), mb.vertices.len());
        prop_assert_eq!(ma.triangles.len(), mb.triangles.len());
        let mut pa: Vec<[f64; 3]> = ma.vertices.iter().map(|v| { let mut v = *v; v[axis] += 1.0; v }).collect();
        let mut pb = mb.vertices.clone();
        pa.sort_by(|p, q| p.partial_cmp(q).unwrap());
        pb.sort_by(|p, q| p.partial_cmp(q).unwrap());
        for (p, q) in pa.iter().zip(&pb) {
            prop_assert!((0..3).all(|i| (p[i] - q[i]).abs() < 1e-12), "{:?} vs {:?}", p, q);
        }
    }
}

fn small(k: usize, i: usize, seed: u64) -> SirConfig {
    let mut cfg = SirConfig::default();
    cfg.k = k;
    cfg.i = i;
    cfg.seed = seed;
    cfg.task.side = 16;
    cfg
}

#[test]
fn run_nfe_does_not_depend_on_inner_steps() {
    let cfg = small(6, 1, 3);
    let task = OracleTask::build(flatland_task(TaskShape::Cross, 16), &cfg).unwrap();
    let counts: Vec<u64> = [1, 5, 15]
        .iter()
        .map(|&i| {
            let mut c = cfg.clone();
            c.i = i;
            run_sir(&c, &task.problem()).unwrap().1.total_nfe()
        })
        .collect();
    assert!(counts.windows(2).all(|w| w[0] == w[1]), "{counts:?}");
}

#[test]
fn identical_seeds_give_identical_traces() {
    let cfg = small(5, 4, 11);
    let task = OracleTask::build(flatland_task(TaskShape::Ring, 16), &cfg).unwrap();
    let (a, ta) = run_sir(&cfg, &task.problem()).unwrap();
    let (b, tb) = run_sir(&cfg, &task.problem()).unwrap();
    assert_eq!(a, b);
    for (x, y) in ta.records.iter().zip(&tb.records) {
        assert_eq!(x.loss.to_bits(), y.loss.to_bits());
        assert_eq!((x.t1, x.t2, x.nfe), (y.t1, y.t2, y.nfe));
    }
}

#[test]
fn state_type_is_plain_data() {
    let s = DiffusionState { x: vec![1.0], t: 3 };
    assert_eq!(s.clone(), s);
}
