//! Acceptance suite: runs every criterion and prints one PASS/FAIL line each.
//! Pass criterion ids (e.g. `C3`) as arguments to run a subset.

mod common;

use std::f64::consts::PI;
use std::panic;
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use common::*;
use kiw_core::advect::*;
use kiw_core::circulation::*;
use kiw_core::exterior::*;
use kiw_core::fields::{catalog_field, FieldJet, FieldKind};
use kiw_core::flow::*;
use kiw_core::kiw::*;
use kiw_core::linalg::Mat;
use kiw_core::stats::fit_log2_slope;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn heun(drift: FieldJet, noise: Vec<FieldJet>) -> FlowModel {
    FlowModel::new(drift, noise, Scheme::StratonovichHeun).unwrap()
}

fn field(name: &str, p: &[f64], n: usize) -> FieldJet {
    catalog_field(name, p, n).unwrap()
}

fn zero_vector(n: usize) -> FieldJet {
    FieldJet::zero(FieldKind::Vector, n)
}

fn c1() -> Outcome {
    let x = field("quadratic_scalar", &[0.0, 1.0, 0.0], 1);
    let one = field("constant_scalar", &[1.0], 1);
    let zero = FieldJet::zero(FieldKind::Scalar, 1);
    let model = heun(zero_vector(1), vec![field("constant_vector", &[1.0], 1)]);
    let d = make_driver(11, 1.0, 1.0 / 64.0, 256, ChannelSpec::shared(1)).unwrap();
    let tests = default_test_sets(1, 0, 0);
    let mut worst = 0.0f64;
    let mut per_level = Vec::new();
    for (k0, h) in [(x.clone(), one), (zero.clone(), x)] {
        let sm = SemimartingaleForm::new(
            k0,
            zero.clone(),
            vec![Diffusion {
                form: h,
                channel: 0,
                modulation: None,
            }],
            Convention::Ito,
        )
        .unwrap();
        let r = kiw_residual(&sm, &model, &d, &[vec![0.4], vec![-1.3]], &tests, 5).unwrap();
        for l in &r.levels {
            worst = worst.max(l.max_abs_residual);
        }
        per_level.push(r.levels.iter().map(|l| format!("{:.1e}", l.max_abs_residual)).collect::<Vec<_>>().join(","));
    }
    verdict(
        worst <= 1e-10,
        format!("max residual {worst:.2e} over dt 2^-6..2^-10, 256 paths (x+W: [{}], W x: [{}])", per_level[0], per_level[1]),
    )
}

fn generic_kiw(noise: bool) -> KiwReport {
    let n = 2;
    let k0 = field("gaussian_form", &[1.0, 1.0, 1.0, 0.5], n);
    let g = field("gaussian_form", &[1.0, 1.5, 0.3, -0.2], n);
    let h = field("gaussian_form", &[1.0, 0.8, 0.5, 0.7], n);
    let diffusions = if noise {
        vec![Diffusion {
            form: h,
            channel: 0,
            modulation: None,
        }]
    } else {
        vec![]
    };
    let sm = SemimartingaleForm::new(k0, g, diffusions, Convention::Ito).unwrap();
    let xi = if noise { vec![field("shear", &[0.5], n)] } else { vec![] };
    let model = heun(field("rigid_rotation", &[], n), xi);
    let paths = if noise { 256 } else { 1 };
    let d = make_driver(2024, 1.0, 1.0 / 64.0, paths, ChannelSpec::independent(1, 1)).unwrap();
    let seeds = vec![vec![0.3, -0.2], vec![-0.5, 0.4]];
    kiw_residual(&sm, &model, &d, &seeds, &default_test_sets(n, 1, 7), 4).unwrap()
}

fn c2() -> Outcome {
    let s = generic_kiw(true);
    let d = generic_kiw(false);
    let ss = s.slope.map_or(f64::NAN, |f| f.slope);
    let ds = d.slope.map_or(f64::NAN, |f| f.slope);
    let rms: Vec<String> = s.levels.iter().map(|l| format!("{:.2e}", l.rms_residual)).collect();
    verdict(
        ss >= 0.35 && (1.7..=2.3).contains(&ds),
        format!("stochastic slope {ss:.3} (rms {}), deterministic slope {ds:.3}", rms.join(",")),
    )
}

/// Scalar Ito-Wentzell right side assembled from gradients and Hessians,
/// with the same time discretization as the k-form evaluator.
#[allow(clippy::too_many_arguments)]
fn scalar_oracle(
    f0: &FieldJet,
    g: &FieldJet,
    hs: &[(FieldJet, usize)],
    model: &FlowModel,
    d: &BrownianDriver,
    flow: &PathFlow,
    seed: usize,
    ito: bool,
) -> Vec<f64> {
    let n = f0.dim();
    let path = flow.path;
    let l = d.n_steps;
    let w: Vec<Vec<f64>> = hs.iter().map(|(_, c)| d.path_values(path, d.spec.k_channels[*c])).collect();
    let nj = model.noise.len();
    // (drift integrand, H_i, ξ_j·∇f, ξ_j·∇h_i)
    let terms = |s: usize| -> (f64, Vec<f64>, Vec<f64>, Vec<Vec<f64>>) {
        let y = &flow.states[s][seed].x;
        let t = d.time(s);
        let j0 = f0.jet(0.0, y, 2).unwrap();
        let jg = g.jet(0.0, y, 2).unwrap();
        let jh: Vec<_> = hs.iter().map(|(h, _)| h.jet(0.0, y, 2).unwrap()).collect();
        let grad = |l: usize| j0.d1(0, l) + t * jg.d1(0, l) + jh.iter().zip(&w).map(|(h, w)| w[s] * h.d1(0, l)).sum::<f64>();
        let hess = |l: usize, m: usize| {
            j0.d2(0, l, m) + t * jg.d2(0, l, m) + jh.iter().zip(&w).map(|(h, w)| w[s] * h.d2(0, l, m)).sum::<f64>()
        };
        let b = model.drift.jet(0.0, y, 1).unwrap();
        let mut drift = jg.value[0] + (0..n).map(|l| b.value[l] * grad(l)).sum::<f64>();
        let xis: Vec<_> = model.noise.iter().map(|x| x.jet(0.0, y, 1).unwrap()).collect();
        if ito {
            for xi in &xis {
                for l in 0..n {
                    for m in 0..n {
                        drift += 0.5 * (xi.value[l] * xi.d1(m, l) * grad(m) + xi.value[l] * xi.value[m] * hess(l, m));
                    }
                }
            }
        }
        let h: Vec<f64> = jh.iter().map(|h| h.value[0]).collect();
        let x: Vec<f64> = xis.iter().map(|xi| (0..n).map(|l| xi.value[l] * grad(l)).sum()).collect();
        let c: Vec<Vec<f64>> = jh
            .iter()
            .map(|h| xis.iter().map(|xi| (0..n).map(|l| xi.value[l] * h.d1(0, l)).sum()).collect())
            .collect();
        (drift, h, x, c)
    };
    let mut out = vec![f0.eval(0.0, &flow.states[0][seed].x).unwrap()[0]];
    let mut prev = terms(0);
    for k in 0..l {
        let cur = terms(k + 1);
        let dt = d.time(k + 1) - d.time(k);
        let mut acc = *out.last().unwrap() + 0.5 * dt * (prev.0 + cur.0);
        for (i, (_, c)) in hs.iter().enumerate() {
            let dw = d.k_increment(path, *c, k).unwrap();
            acc += if ito { dw * prev.1[i] } else { 0.5 * dw * (prev.1[i] + cur.1[i]) };
        }
        for j in 0..nj {
            let db = d.flow_increment(path, j, k).unwrap();
            acc += if ito { db * prev.2[j] } else { 0.5 * db * (prev.2[j] + cur.2[j]) };
            if ito {
                for (i, (_, c)) in hs.iter().enumerate() {
                    if d.spec.identified(*c, j) {
                        acc += d.k_increment(path, *c, k).unwrap() * db * prev.3[i][j];
                    }
                }
            }
        }
        out.push(acc);
        prev = cur;
    }
    out
}

fn c3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst = 0.0f64;
    let mut shared_cases = 0;
    for _ in 0..10 {
        let n = rng.gen_range(1..=3);
        let f0 = random_form(&mut rng, n, 0);
        let g = random_form(&mut rng, n, 0);
        let m = rng.gen_range(1..=2);
        let hs: Vec<(FieldJet, usize)> = (0..m).map(|i| (random_form(&mut rng, n, 0), i)).collect();
        let nj = rng.gen_range(1..=2);
        let small = |f: FieldJet| FieldJet::linear_combination(vec![(0.3, f)]).unwrap();
        let model = heun(
            small(random_vector(&mut rng, n)),
            (0..nj).map(|_| small(random_vector(&mut rng, n))).collect(),
        );
        let shared = rng.gen_bool(0.5);
        let spec = if shared {
            shared_cases += 1;
            ChannelSpec {
                k_channels: (0..m).collect(),
                flow_channels: (0..nj).collect(),
            }
        } else {
            ChannelSpec::independent(m, nj)
        };
        let convention = if rng.gen_bool(0.5) { Convention::Ito } else { Convention::Stratonovich };
        let sm = SemimartingaleForm::new(
            f0.clone(),
            g.clone(),
            hs.iter()
                .map(|(h, c)| Diffusion {
                    form: h.clone(),
                    channel: *c,
                    modulation: None,
                })
                .collect(),
            convention,
        )
        .unwrap();
        let d = make_driver(rng.gen(), 1.0, 1.0 / 32.0, 2, spec).unwrap();
        let seeds: Vec<Vec<f64>> = (0..2).map(|_| random_point(&mut rng, n)).collect();
        for p in 0..2 {
            let Some(flow) = integrate_path(&model, &d, p, &seeds, false, &Record::All).unwrap() else {
                continue;
            };
            for s in 0..seeds.len() {
                let series = side_series(&sm, &model, &d, &flow, s).unwrap();
                let oracle = scalar_oracle(&f0, &g, &hs, &model, &d, &flow, s, convention == Convention::Ito);
                for (r, o) in series.rhs.iter().zip(&oracle) {
                    worst = worst.max((r.comps[0] - o).abs() / o.abs().max(1.0));
                }
            }
        }
    }
    verdict(
        worst <= 1e-12,
        format!("max relative difference {worst:.2e} over 10 random configurations ({shared_cases} with shared channels)"),
    )
}

fn c4() -> Outcome {
    let n = 2;
    let sm = SemimartingaleForm::new(
        field("gaussian_form", &[1.0, 1.0, 1.0, 0.5], n),
        field("gaussian_form", &[1.0, 1.5, 0.3, -0.2], n),
        vec![Diffusion {
            form: field("gaussian_form", &[1.0, 0.8, 0.5, 0.7], n),
            channel: 0,
            modulation: Some(Modulation {
                lambda: 0.5,
                channel: 0,
            }),
        }],
        Convention::Stratonovich,
    )
    .unwrap();
    let model = heun(field("rigid_rotation", &[], n), vec![field("shear", &[0.5], n)]);
    let d = make_driver(77, 1.0, 1.0 / 64.0, 128, ChannelSpec::shared(1)).unwrap();
    let seeds = vec![vec![0.3, -0.2], vec![-0.5, 0.4]];
    let r = kiw_duality(&sm, &model, &d, &seeds, &default_test_sets(n, 1, 7), 4).unwrap();
    let slope = r.slope.map_or(f64::NAN, |f| f.slope);
    let rms: Vec<String> = r.levels.iter().map(|l| format!("{:.2e}", l.rms_residual)).collect();
    verdict(slope >= 0.35, format!("duality difference slope {slope:.3} (rms {})", rms.join(",")))
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    max_abs_diff(a, b) / max_abs(a).max(max_abs(b)).max(1.0)
}

/// Worst relative violation of each law over `count` random instances.
fn exterior_laws(rng: &mut ChaCha8Rng, count: usize, fd: Option<f64>) -> [f64; 4] {
    let prep = |f: FieldJet| match fd {
        Some(h) => f.to_finite_difference(h).unwrap(),
        None => f,
    };
    let mut worst = [0.0f64; 4];
    for _ in 0..count {
        let n = rng.gen_range(1..=3);
        let x = random_point(rng, n);
        // Cartan
        let k = rng.gen_range(0..=n);
        let kf = prep(random_form(rng, n, k));
        let u = prep(random_vector(rng, n));
        let lie = LieField::new(u.clone(), kf.clone()).unwrap().eval(0.0, &x).unwrap();
        let mut cartan = vec![0.0; lie.len()];
        if k < n {
            let v = InteriorField::new(u.clone(), ExteriorDerivativeField::new(kf.clone()).unwrap())
                .unwrap()
                .eval(0.0, &x)
                .unwrap();
            cartan.iter_mut().zip(&v).for_each(|(a, b)| *a += b);
        }
        if k > 0 {
            let v = ExteriorDerivativeField::new(InteriorField::new(u.clone(), kf.clone()).unwrap())
                .unwrap()
                .eval(0.0, &x)
                .unwrap();
            cartan.iter_mut().zip(&v).for_each(|(a, b)| *a += b);
        }
        worst[0] = worst[0].max(rel(&lie, &cartan));
        // d∘d
        if n >= 2 {
            let k = rng.gen_range(0..=n - 2);
            let f = prep(random_form(rng, n, k));
            let dd = ExteriorDerivativeField::new(ExteriorDerivativeField::new(f.clone()).unwrap())
                .unwrap()
                .eval(0.0, &x)
                .unwrap();
            let scale = max_abs(&f.d2(0.0, &x).unwrap()).max(1.0);
            worst[1] = worst[1].max(max_abs(&dd) / scale);
        }
        // Leibniz
        let p = rng.gen_range(0..n);
        let q = rng.gen_range(0..n - p);
        let a = prep(random_form(rng, n, p));
        let b = prep(random_form(rng, n, q));
        let lhs = ExteriorDerivativeField::new(WedgeField::new(a.clone(), b.clone()).unwrap())
            .unwrap()
            .eval(0.0, &x)
            .unwrap();
        let av = KFormValue::new(n, p, a.eval(0.0, &x).unwrap()).unwrap();
        let bv = KFormValue::new(n, q, b.eval(0.0, &x).unwrap()).unwrap();
        let da = exterior_derivative(&a, 0.0, &x).unwrap();
        let db = exterior_derivative(&b, 0.0, &x).unwrap();
        let sign = if p % 2 == 0 { 1.0 } else { -1.0 };
        let rhs = wedge(&da, &bv).unwrap().add_scaled(sign, &wedge(&av, &db).unwrap()).unwrap();
        worst[2] = worst[2].max(rel(&lhs, &rhs.comps));
        // functoriality of affine pullbacks, and d commuting with pullback
        let k = rng.gen_range(0..=n);
        let f = prep(random_form(rng, n, k));
        let a1 = Mat::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let a2 = Mat::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let c1: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let c2: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let composed_c: Vec<f64> = a1.mul_vec(&c2).iter().zip(&c1).map(|(a, b)| a + b).collect();
        let once = LinearPullbackField::new(a1.mul(&a2), composed_c, f.clone()).unwrap();
        let twice = LinearPullbackField::new(
            a2.clone(),
            c2.clone(),
            LinearPullbackField::new(a1.clone(), c1.clone(), f.clone()).unwrap(),
        )
        .unwrap();
        let mut e = rel(&once.eval(0.0, &x).unwrap(), &twice.eval(0.0, &x).unwrap());
        if k < n {
            let d_pull = ExteriorDerivativeField::new(
                LinearPullbackField::new(a1.clone(), c1.clone(), f.clone()).unwrap(),
            )
            .unwrap();
            let pull_d =
                LinearPullbackField::new(a1, c1, ExteriorDerivativeField::new(f).unwrap()).unwrap();
            e = e.max(rel(&d_pull.eval(0.0, &x).unwrap(), &pull_d.eval(0.0, &x).unwrap()));
        }
        worst[3] = worst[3].max(e);
    }
    worst
}

fn c5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let an = exterior_laws(&mut rng, 100, None);
    let fd = exterior_laws(&mut rng, 100, Some(1e-4));
    let ok = an.iter().all(|w| *w <= 1e-6) && fd.iter().all(|w| *w <= 1e-4);
    let fmt = |w: &[f64; 4]| format!("Cartan {:.1e}, d∘d {:.1e}, Leibniz {:.1e}, functoriality {:.1e}", w[0], w[1], w[2], w[3]);
    verdict(ok, format!("analytic: {}; FD-backed: {}", fmt(&an), fmt(&fd)))
}

fn c6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.gen_range(1..=3);
        let k = rng.gen_range(0..=n);
        let kf = random_form(&mut rng, n, k);
        let u = random_vector(&mut rng, n);
        let x = random_point(&mut rng, n);
        let direct = double_lie_derivative(&u, &kf, 0.0, &x).unwrap();
        let composed = LieField::new(u.clone(), LieField::new(u, kf).unwrap())
            .unwrap()
            .eval(0.0, &x)
            .unwrap();
        worst = worst.max(rel(&direct.comps, &composed));
    }
    verdict(worst <= 1e-8, format!("max relative difference {worst:.2e} over 100 instances"))
}

fn c7() -> Outcome {
    let model = heun(zero_vector(1), vec![field("linear_vector", &[1.0], 1)]);
    let base = make_driver(7, 1.0, 1.0 / 64.0, 256, ChannelSpec::independent(0, 1)).unwrap();
    let mut dts = Vec::new();
    let mut errs = Vec::new();
    for l in 0..5 {
        let d = base.refined(l);
        let f = integrate_flow(&model, &d, &[vec![1.0]], false, &Record::Final).unwrap();
        let sq: f64 = f
            .retained()
            .map(|p| {
                let exact = d.path_values(p.path, 0)[d.n_steps].exp();
                (p.states[0][0].x[0] - exact).powi(2)
            })
            .sum();
        dts.push(d.dt());
        errs.push((sq / f.retained().count() as f64).sqrt());
    }
    let slope = fit_log2_slope(&dts, &errs).map_or(f64::NAN, |f| f.slope);
    // Jacobian against central differences of the flow map
    let model = heun(field("sine_shear", &[0.5], 2), vec![field("taylor_green", &[0.4], 2)]);
    let d = make_driver(8, 1.0, 1.0 / 1024.0, 4, ChannelSpec::independent(0, 1)).unwrap();
    let h = 1e-5;
    let mut jac_err = 0.0f64;
    for p in 0..4 {
        for x in [[0.3, -0.4], [1.1, 0.7]] {
            let s = forward_point(&model, &d, p, &x, d.n_steps).unwrap();
            for l in 0..2 {
                let mut xp = x;
                let mut xm = x;
                xp[l] += h;
                xm[l] -= h;
                let a = forward_point(&model, &d, p, &xp, d.n_steps).unwrap();
                let b = forward_point(&model, &d, p, &xm, d.n_steps).unwrap();
                for i in 0..2 {
                    let fd = (a.x[i] - b.x[i]) / (2.0 * h);
                    jac_err = jac_err.max((fd - s.j.get(i, l)).abs() / s.j.norm_inf().max(1.0));
                }
            }
        }
    }
    verdict(
        slope >= 0.5 && jac_err <= 1e-3,
        format!(
            "geometric SDE strong slope {slope:.3} (rms {:.2e} -> {:.2e}); Jacobian vs FD {jac_err:.2e} at dt 2^-10",
            errs[0],
            errs[errs.len() - 1]
        ),
    )
}

fn chars(model: FlowModel, d: BrownianDriver, route: InverseRoute) -> Arc<Characteristics> {
    Arc::new(Characteristics::new(model, Arc::new(d), route))
}

fn c8() -> Outcome {
    let model = heun(field("taylor_green", &[0.6], 2), vec![field("sine_shear", &[0.4], 2)]);
    let base = make_driver(88, 1.0, 1.0 / 64.0, 4, ChannelSpec::independent(0, 1)).unwrap();
    let grid = QuadratureGrid::new(2, 64).unwrap();
    let d0 = field("periodic_bump", &[0.9, 1.0, 2.0], 2);
    let mut worst_per_level = Vec::new();
    for l in 0..3 {
        let d = base.refined(l);
        let last = d.n_steps;
        let c = chars(model.clone(), d, InverseRoute::Backward);
        let dens = advect(AdvectedKind::Density, d0.clone(), c).unwrap();
        let mut worst = 0.0f64;
        for p in 0..4 {
            let m0 = total_mass(&dens, &grid, 0, p).unwrap();
            let mt = total_mass(&dens, &grid, last, p).unwrap();
            worst = worst.max(((mt - m0) / m0).abs());
        }
        worst_per_level.push(worst);
    }
    let finest = worst_per_level[2];
    let decays = worst_per_level.windows(2).all(|w| w[1] <= w[0].max(1e-12));
    // incompressible transport of a constant density
    let model = heun(field("rigid_rotation", &[], 2), vec![field("constant_vector", &[0.3, -0.1], 2)]);
    let d = make_driver(89, 1.0, 1.0 / 256.0, 8, ChannelSpec::independent(0, 1)).unwrap();
    let dens = advect(AdvectedKind::Density, field("constant_scalar", &[2.5], 2), chars(model, d, InverseRoute::Backward)).unwrap();
    let mut const_err = 0.0f64;
    for p in 0..8 {
        for x in [[0.1, 0.2], [-1.0, 2.0], [3.0, -0.5]] {
            const_err = const_err.max((dens.evaluate(256, p, &x).unwrap()[0] - 2.5).abs() / 2.5);
        }
    }
    verdict(
        finest <= 1e-3 && decays && const_err <= 1e-6,
        format!(
            "relative mass drift per level {:.1e},{:.1e},{:.1e} (dt 2^-6..2^-8, N=64); constant density error {const_err:.1e}",
            worst_per_level[0], worst_per_level[1], worst_per_level[2]
        ),
    )
}

fn c9() -> Outcome {
    let model = heun(field("sine_shear", &[0.5], 2), vec![field("taylor_green", &[0.4], 2)]);
    let d = make_driver(2024, 1.0, 1.0 / 32.0, 16, ChannelSpec::independent(0, 1)).unwrap();
    let v0 = field("fourier_form", &[1.0, 0.8, 0.0, 1.0, 0.3, 0.6, 1.0, 0.0, 1.0], 2);
    let data = KelvinData::new(v0, None).unwrap();
    let lp = Loop::circle(&[0.2, 0.1], 1.0, 512).unwrap();
    let c = Characteristics::new(model.clone(), Arc::new(d), InverseRoute::Backward);
    let conv = kelvin_convergence(&data, &c, &lp, 4).unwrap();
    let slope = conv.slope.map_or(f64::NAN, |f| f.slope);
    // rotation-symmetric deterministic case
    let area = field("quadratic_form", &[1.0, 0.0, 0.0, -0.5, 0.0, 0.0, 0.0, 0.0, 0.5, 0.0, 0.0, 0.0, 0.0], 2);
    let rot = Characteristics::new(
        heun(field("rigid_rotation", &[], 2), vec![]),
        Arc::new(make_driver(1, 1.0, 1.0 / 256.0, 1, ChannelSpec::independent(0, 0)).unwrap()),
        InverseRoute::ExactInverse,
    );
    let circle = Loop::circle(&[0.0, 0.0], 1.0, 256).unwrap();
    let r = kelvin_check(&KelvinData::new(area, None).unwrap(), &rot, &circle, &[128, 256]).unwrap();
    let sym = r.retained().flat_map(|s| s.defect.iter()).fold(0.0f64, |m, d| m.max(d.abs()));
    // change of variables on the generic flow
    let exact = Characteristics::new(
        model,
        Arc::new(make_driver(2025, 1.0, 1.0 / 128.0, 4, ChannelSpec::independent(0, 1)).unwrap()),
        InverseRoute::ExactInverse,
    );
    let lp_fine = Loop::circle(&[0.2, 0.1], 1.0, 1024).unwrap();
    let mut cov = 0.0f64;
    for p in 0..4 {
        let (a, b) = change_of_variables(&data, &exact, &lp_fine, 128, p).unwrap();
        cov = cov.max((a - b).abs() / a.abs().max(b.abs()));
    }
    let rms: Vec<String> = conv.levels.iter().map(|l| format!("{:.2e}", l.rms_defect)).collect();
    verdict(
        slope >= 0.35 && sym <= 1e-8 && cov <= 1e-6,
        format!(
            "F=0 defect slope {slope:.3} (rms {}); rotation case {sym:.1e}; change of variables {cov:.1e}",
            rms.join(",")
        ),
    )
}

fn c10() -> Outcome {
    let model = heun(field("abc_vector", &[0.5, 0.3, 0.2], 3), vec![field("sine_shear", &[0.3], 3)]);
    let base = make_driver(1010, 0.5, 1.0 / 16.0, 2, ChannelSpec::independent(0, 1)).unwrap();
    let a0 = field("abc_form", &[1.0, 0.7, 0.4], 3);
    let grid = QuadratureGrid::new(3, 32).unwrap();
    let mut hel = Vec::new();
    let mut ent = Vec::new();
    let mut last_chars = None;
    for l in 0..2 {
        let d = base.refined(l);
        let last = d.n_steps;
        let c = chars(model.clone(), d, InverseRoute::Backward);
        let m = advect_magnetic(a0.clone(), c.clone()).unwrap();
        let dens = advect(AdvectedKind::Density, field("periodic_bump", &[1.0, 1.0, 2.0, 3.0], 3), c.clone()).unwrap();
        let s = advect(AdvectedKind::Scalar, field("fourier_scalar", &[1.0, 1.0, 0.0, 1.0, 0.5], 3), c.clone()).unwrap();
        let (mut wh, mut we) = (0.0f64, 0.0f64);
        for p in 0..2 {
            let h0 = magnetic_helicity(&m, &grid, 0, p).unwrap();
            let ht = magnetic_helicity(&m, &grid, last, p).unwrap();
            wh = wh.max(((ht - h0) / h0).abs());
            let e0 = entropy_integral(&dens, &s, EntropyFunction::Square, &grid, 0, p).unwrap();
            let et = entropy_integral(&dens, &s, EntropyFunction::Square, &grid, last, p).unwrap();
            we = we.max(((et - e0) / e0).abs());
        }
        hel.push(wh);
        ent.push(we);
        last_chars = Some((c, m));
    }
    let (c, m) = last_chars.unwrap();
    let last = c.driver.n_steps;
    let fine = magnetic_helicity(&m, &QuadratureGrid::new(3, 64).unwrap(), last, 0).unwrap();
    let coarse = magnetic_helicity(&m, &grid, last, 0).unwrap();
    let dense = ((fine - coarse) / fine).abs();
    let expect = (2.0 * PI).powi(3) * (1.0 + 0.49 + 0.16);
    let h0 = magnetic_helicity(&m, &grid, 0, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let mut closed = 0.0f64;
    for _ in 0..100 {
        let step = rng.gen_range(1..=last);
        let p = rng.gen_range(0..2);
        let x: Vec<f64> = (0..3).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
        closed = closed.max(m.closedness_defect(step, p, &x).unwrap());
    }
    let improving = |v: &[f64]| v[1] <= v[0].max(1e-12);
    verdict(
        hel.iter().chain(&ent).all(|w| *w <= 1e-3)
            && improving(&hel)
            && improving(&ent)
            && closed <= 1e-6
            && dense <= 1e-4
            && ((h0 - expect) / expect).abs() <= 1e-10,
        format!(
            "helicity drift {:.1e},{:.1e}; entropy drift {:.1e},{:.1e} (dt 2^-4, 2^-5, N=32); N=32 vs 64 {dense:.1e}; max |d(dA)| {closed:.1e}",
            hel[0], hel[1], ent[0], ent[1]
        ),
    )
}

fn c11() -> Outcome {
    let g2 = QuadratureGrid::new(2, 64).unwrap();
    let u2 = field("fourier_vector", &[0.5, 1.0, 0.0, 0.2, -0.3, 0.0, 1.0, 1.1], 2);
    let scalar = field("periodic_bump", &[0.8, 1.0, 2.0], 2);
    let density = field("fourier_form", &[2.0, 0.7, 1.0, 1.0, 0.3], 2);
    let one_form = field("fourier_form", &[1.0, 0.4, 0.0, 1.0, 0.1, 0.9, 1.0, 0.0, 0.5], 2);
    let vd = field("fourier_vector", &[1.0, 1.0, 1.0, 0.0, 0.5, 2.0, 0.0, 0.3], 2);
    let g3 = QuadratureGrid::new(3, 24).unwrap();
    let u3 = field("abc_vector", &[0.5, 0.3, 0.2], 3);
    let a3 = field("abc_form", &[1.0, 0.7, 0.4], 3);
    let b3 = field("fourier_vector", &[1.0, 1.0, 0.0, 1.0, 0.2, 0.5, 0.0, 1.0, 0.0, 1.0, 0.4, 1.0, 1.0, 0.0, 0.0], 3);
    let cases: [(&FieldJet, &FieldJet, &FieldJet, &QuadratureGrid); 4] = [
        (&density, &scalar, &u2, &g2),
        (&scalar, &density, &u2, &g2),
        (&vd, &one_form, &u2, &g2),
        (&b3, &a3, &u3, &g3),
    ];
    let mut worst = 0.0f64;
    let mut bilinear = 0.0f64;
    for (b, a, u, g) in cases {
        let r = diamond_pairing_defect(b, a, u, g).unwrap();
        worst = worst.max(r.defect);
        let b2 = FieldJet::linear_combination(vec![(2.0, b.clone())]).unwrap();
        let r2 = diamond_pairing_defect(&b2, a, u, g).unwrap();
        let scale = r.lhs.abs().max(r.rhs.abs()).max(1.0);
        bilinear = bilinear
            .max((r2.lhs - 2.0 * r.lhs).abs() / scale)
            .max((r2.rhs - 2.0 * r.rhs).abs() / scale)
            .max((r2.defect - 2.0 * r.defect).abs() / scale);
    }
    let zero = diamond_pairing_defect(&vd, &one_form, &zero_vector(2), &g2).unwrap();
    verdict(
        worst <= 1e-6 && bilinear <= 1e-13 && zero.lhs == 0.0 && zero.rhs == 0.0,
        format!("max pairing defect {worst:.1e} over 4 cases; bilinearity {bilinear:.1e}"),
    )
}

const REPRO_CONFIG: &str = r#"{
  "n": 2, "t_final": 1.0, "dt": 0.0625, "levels": 2, "n_paths": 24, "seed": 4242,
  "flow": {"drift": {"name": "taylor_green", "params": [0.6]}, "noise": [{"name": "sine_shear", "params": [0.4]}]},
  "kform": {"k0": {"name": "gaussian_form", "params": [1, 1.0, 1.0, 0.5]},
            "diffusions": [{"form": {"name": "gaussian_form", "params": [1, 0.8, 0.5, 0.7]}, "channel": 0}],
            "convention": "ito", "seeds": [[0.3, -0.2]]},
  "advect": {"density": {"name": "periodic_bump", "params": [0.9, 1.0, 2.0]},
             "scalar": {"name": "fourier_scalar", "params": [1.0, 1.0, 1.0, 0.3]},
             "grid_nodes": 16, "diagnostics": ["total_mass", "entropy_integral"], "probes": [[0.3, 0.4]]},
  "kelvin": {"v0": {"name": "fourier_form", "params": [1, 0.8, 0.0, 1.0, 0.3, 0.6, 1.0, 0.0, 1.0]},
             "loop": {"center": [0.2, 0.1], "radius": 1.0, "nodes": 32}}
}"#;

fn run_cli(cmd: &str, config: &Path, out: &Path, workers: usize) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_kiw"))
        .args([cmd, "--config"])
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(["--workers", &workers.to_string()])
        .output()
        .map_err(|e| e.to_string())?;
    if status.status.success() {
        Ok(())
    } else {
        Err(format!("{cmd} exited with {:?}: {}", status.status.code(), String::from_utf8_lossy(&status.stderr)))
    }
}

fn c12() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = dir.path().join("config.json");
    std::fs::write(&config, REPRO_CONFIG).map_err(|e| e.to_string())?;
    let mut compared = 0;
    for cmd in ["kiw-verify", "advect", "kelvin", "convergence", "diagnostics"] {
        let a = dir.path().join(format!("{cmd}-1"));
        let b = dir.path().join(format!("{cmd}-4"));
        run_cli(cmd, &config, &a, 1)?;
        run_cli(cmd, &config, &b, 4)?;
        let manifest: serde_json::Value =
            serde_json::from_slice(&std::fs::read(a.join("manifest.json")).map_err(|e| e.to_string())?)
                .map_err(|e| e.to_string())?;
        let files = manifest["files"].as_array().filter(|f| !f.is_empty()).ok_or(format!("{cmd}: manifest lists no files"))?;
        for f in files {
            let f = f.as_str().unwrap();
            let x = std::fs::read(a.join(f)).map_err(|e| e.to_string())?;
            let y = std::fs::read(b.join(f)).map_err(|e| e.to_string())?;
            if x != y {
                return Err(format!("{cmd}: {f} differs between 1 and 4 workers"));
            }
            compared += 1;
        }
    }
    verdict(true, format!("{compared} result files byte-identical at 1 and 4 workers"))
}

fn main() {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [(&str, &str, fn() -> Outcome); 12] = [
        ("C1", "closed-form KIW exactness", c1),
        ("C2", "KIW strong self-convergence", c2),
        ("C3", "degree-0 oracle equivalence", c3),
        ("C4", "Ito/Stratonovich duality", c4),
        ("C5", "exterior-calculus laws", c5),
        ("C6", "double Lie derivative cross-check", c6),
        ("C7", "flow correctness", c7),
        ("C8", "stochastic continuity", c8),
        ("C9", "Kelvin circulation theorem", c9),
        ("C10", "MHD advected sector", c10),
        ("C11", "diamond pairing definition", c11),
        ("C12", "reproducibility", c12),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    let mut ran = 0;
    for (id, name, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|a| a == id) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let outcome = panic::catch_unwind(f).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("PASS {id} {name}: {d} [{secs:.1}s]"),
            Err(d) => {
                failed += 1;
                println!("FAIL {id} {name}: {d} [{secs:.1}s]");
            }
        }
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
