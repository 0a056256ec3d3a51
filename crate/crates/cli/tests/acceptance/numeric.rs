use fsdet::heads::{hessian_vec_product, loss_and_grad, Batch, LossConfig, PredictorHead};
use fsdet::linalg::{cg_solve, dense_spd_solve, dot, norm, DenseMatrix, LinearOperator};
use fsdet::optim::{newton_direction, newton_step, HeadObjective, TwiceDifferentiable};
use fsdet::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::Outcome;

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn gauss_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| gauss(rng)).collect()
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    norm(&sub(a, b)) / norm(b).max(1e-300)
}

/// Random head and batch; labels cover background and every category.
pub fn random_problem(rng: &mut ChaCha8Rng, n: usize, d: usize, c: usize) -> (PredictorHead, Batch) {
    let w = d + 1;
    let cls: Vec<f64> = (0..(c + 1) * w).map(|_| 0.5 * gauss(rng)).collect();
    let reg: Vec<f64> = (0..4 * c * w).map(|_| 0.3 * gauss(rng)).collect();
    let head = PredictorHead::from_parts(c, d, cls, reg).unwrap();
    let mut batch = Batch::new(d);
    for _ in 0..n {
        let x = gauss_vec(rng, d);
        let label = rng.random_range(-1..c as i32);
        let t = if label >= 0 { [gauss(rng), gauss(rng), gauss(rng), gauss(rng)] } else { [0.0; 4] };
        batch.push(&x, label, t).unwrap();
    }
    (head, batch)
}

fn grad_at(head: &PredictorHead, w: &[f64], batch: &Batch, loss: &LossConfig) -> (f64, Vec<f64>) {
    let mut h = head.clone();
    h.set_flat(w).unwrap();
    let (v, g) = loss_and_grad(&h, batch, loss).unwrap();
    (v.total, g)
}

pub fn gradient_hvp() -> Outcome {
    let loss = LossConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut worst_g, mut worst_h, mut worst_sym, mut worst_lin) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..50 {
        let n = rng.random_range(1..=64);
        let d = rng.random_range(1..=16);
        let c = rng.random_range(1..=5);
        let (head, batch) = random_problem(&mut rng, n, d, c);
        let w0 = head.flatten();
        let (_, g) = grad_at(&head, &w0, &batch, &loss);
        let h = 1e-5;
        let mut g_fd = vec![0.0; w0.len()];
        for j in 0..w0.len() {
            let mut wp = w0.clone();
            let mut wm = w0.clone();
            wp[j] += h;
            wm[j] -= h;
            g_fd[j] = (grad_at(&head, &wp, &batch, &loss).0 - grad_at(&head, &wm, &batch, &loss).0) / (2.0 * h);
        }
        worst_g = worst_g.max(rel(&g_fd, &g));

        let u = gauss_vec(&mut rng, w0.len());
        let v = gauss_vec(&mut rng, w0.len());
        let hvp = |x: &[f64]| hessian_vec_product(&head, &batch, x, &loss, 0.0).unwrap();
        let (hu, hv) = (hvp(&u), hvp(&v));
        let wp: Vec<f64> = w0.iter().zip(&v).map(|(w, x)| w + h * x).collect();
        let wm: Vec<f64> = w0.iter().zip(&v).map(|(w, x)| w - h * x).collect();
        let hv_fd: Vec<f64> = sub(&grad_at(&head, &wp, &batch, &loss).1, &grad_at(&head, &wm, &batch, &loss).1)
            .iter()
            .map(|x| x / (2.0 * h))
            .collect();
        worst_h = worst_h.max(rel(&hv_fd, &hv));

        let scale = norm(&u) * norm(&hv) + norm(&v) * norm(&hu);
        worst_sym = worst_sym.max((dot(&u, &hv) - dot(&v, &hu)).abs() / scale.max(1e-300));
        let (a, b) = (0.7, -1.3);
        let comb: Vec<f64> = u.iter().zip(&v).map(|(x, y)| a * x + b * y).collect();
        let expect: Vec<f64> = hu.iter().zip(&hv).map(|(x, y)| a * x + b * y).collect();
        worst_lin = worst_lin.max(rel(&hvp(&comb), &expect));
    }
    let detail = format!(
        "max rel err: gradient {worst_g:.1e}, HVP {worst_h:.1e}, symmetry {worst_sym:.1e}, linearity {worst_lin:.1e}"
    );
    if worst_g <= 1e-5 && worst_h <= 1e-5 && worst_sym <= 1e-10 && worst_lin <= 1e-10 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Wishart matrix shifted by 0.5: condition number stays below about 10.
fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DenseMatrix {
    let g = gauss_vec(rng, n * n);
    let mut a = DenseMatrix::zeros(n, n);
    for r in 0..n {
        for c in 0..n {
            let s: f64 = (0..n).map(|k| g[r * n + k] * g[c * n + k]).sum();
            a.set(r, c, s / n as f64 + if r == c { 0.5 } else { 0.0 });
        }
    }
    a
}

pub fn cg_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let (mut worst_res, mut worst_x) = (0.0f64, 0.0f64);
    for _ in 0..50 {
        let n = rng.random_range(1..=32);
        let a = random_spd(&mut rng, n);
        let b = gauss_vec(&mut rng, n);
        let sol = cg_solve(&a, &b, n, 0.0).map_err(|e| e.to_string())?;
        let exact = dense_spd_solve(&a, &b).map_err(|e| e.to_string())?;
        worst_res = worst_res.max(sol.residual_norm / norm(&b));
        worst_x = worst_x.max(rel(&sol.x, &exact));
    }
    let detail = format!("max residual/‖b‖ {worst_res:.1e}, max rel distance to direct solve {worst_x:.1e}");
    if worst_res <= 1e-8 && worst_x <= 1e-8 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// `½xᵀAx − bᵀx` expanded at `x`.
struct Quadratic {
    a: DenseMatrix,
    b: Vec<f64>,
    x: Vec<f64>,
}

impl TwiceDifferentiable for Quadratic {
    fn value_and_grad(&self) -> Result<(f64, Vec<f64>)> {
        let ax = self.a.matvec(&self.x)?;
        let v = 0.5 * dot(&self.x, &ax) - dot(&self.b, &self.x);
        Ok((v, sub(&ax, &self.b)))
    }

    fn hessian<'a>(&'a self, lambda: f64) -> Result<Box<dyn LinearOperator + 'a>> {
        Ok(Box::new(self.a.shifted(lambda)))
    }
}

pub fn quadratic_newton() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst = 0.0f64;
    for _ in 0..30 {
        let n = rng.random_range(1..=24);
        let a = random_spd(&mut rng, n);
        let b = gauss_vec(&mut rng, n);
        let x0 = gauss_vec(&mut rng, n);
        let q = Quadratic { a, b, x: x0.clone() };
        let (step, _) = newton_direction(&q, 0.0, n).map_err(|e| e.to_string())?;
        let x1: Vec<f64> = x0.iter().zip(&step).map(|(x, s)| x + s).collect();
        let opt = dense_spd_solve(&q.a, &q.b).map_err(|e| e.to_string())?;
        worst = worst.max(norm(&sub(&x1, &opt)));
    }
    let detail = format!("30 quadratics, max ‖x₁ − x*‖ {worst:.1e}");
    if worst <= 1e-8 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

pub fn ridge_oracle() -> Outcome {
    let (d, c, per_class) = (5, 3, 40);
    let w = d + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let planted = gauss_vec(&mut rng, 4 * c * w);
    let mut batch = Batch::new(d);
    for k in 0..c {
        for _ in 0..per_class {
            let x = gauss_vec(&mut rng, d);
            let mut t = [0.0; 4];
            for (r, tr) in t.iter_mut().enumerate() {
                let row = &planted[(4 * k + r) * w..(4 * k + r + 1) * w];
                *tr = dot(&row[..d], &x) + row[d] + 0.1 * gauss(&mut rng);
            }
            batch.push(&x, k as i32, t).unwrap();
        }
    }
    for _ in 0..20 {
        batch.push(&gauss_vec(&mut rng, d), -1, [0.0; 4]).unwrap();
    }
    let loss = LossConfig { cls_weight: 0.0, ..LossConfig::default() };
    let mut head = PredictorHead::zeros(c, d);
    let (step, _) = newton_step(&head, &batch, &loss, 0.0, head.num_params()).map_err(|e| e.to_string())?;
    head.add_flat(&step).map_err(|e| e.to_string())?;

    // normal equations per category and box coordinate
    let mut expected = Vec::with_capacity(4 * c * w);
    for k in 0..c {
        let mut gram = DenseMatrix::zeros(w, w);
        let mut rhs = vec![vec![0.0; w]; 4];
        for i in 0..batch.len() {
            if batch.label(i) != k as i32 {
                continue;
            }
            let mut xt = batch.feature(i).to_vec();
            xt.push(1.0);
            for r in 0..w {
                for s in 0..w {
                    gram.set(r, s, gram.get(r, s) + xt[r] * xt[s]);
                }
            }
            let t = batch.target(i);
            for (coord, rh) in rhs.iter_mut().enumerate() {
                for r in 0..w {
                    rh[r] += t[coord] * xt[r];
                }
            }
        }
        for rh in &rhs {
            expected.extend(dense_spd_solve(&gram, rh).map_err(|e| e.to_string())?);
        }
    }
    let err = rel(head.regressor(), &expected);
    let detail = format!("relative error of regressor vs normal equations {err:.1e}");
    if err <= 1e-6 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

pub fn lambda_limit() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let (head, batch) = random_problem(&mut rng, 48, 8, 3);
    let loss = LossConfig::default();
    let obj = HeadObjective { head: &head, batch: &batch, loss: &loss };
    let (_, grad) = obj.value_and_grad().map_err(|e| e.to_string())?;
    let mut ratios = Vec::new();
    for lambda in [1.0, 10.0, 100.0, 1000.0] {
        let (dw, _) = newton_direction(&obj, lambda, 2).map_err(|e| e.to_string())?;
        let gd: Vec<f64> = grad.iter().map(|g| -g / lambda).collect();
        ratios.push(rel(&dw, &gd));
    }
    let decreasing = ratios.windows(2).all(|p| p[1] < p[0]);
    let detail = format!(
        "‖Δw + J/λ‖/‖J/λ‖ at λ = 1, 10, 100, 1000: {}",
        ratios.iter().map(|r| format!("{r:.2e}")).collect::<Vec<_>>().join(", ")
    );
    if decreasing && ratios[3] < 0.01 {
        Ok(detail)
    } else {
        Err(detail)
    }
}
