//! Reference solvers for one-dimensional problems, written directly against
//! the value-function form and independent of the library's solver stack.

use prodplan_core::{ProblemInstance, Regime};

/// Uniform nodes `x_k = −R + 2kR/(n−1)`, `k = 0..n`, endpoints included.
pub fn nodes(radius: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| -radius + 2.0 * radius * k as f64 / (n - 1) as f64)
        .collect()
}

/// Solves `a x_{i−1} + b x_i + c x_{i+1} = d` (`a[0]`, `c[n−1]` unused).
pub fn thomas(a: &[f64], b: &[f64], c: &[f64], d: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut cp = vec![0.0; n];
    let mut dp = vec![0.0; n];
    cp[0] = c[0] / b[0];
    dp[0] = d[0] / b[0];
    for i in 1..n {
        let m = b[i] - a[i] * cp[i - 1];
        cp[i] = c[i] / m;
        dp[i] = (d[i] - a[i] * dp[i - 1]) / m;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = dp[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = dp[i] - cp[i] * x[i + 1];
    }
    x
}

type M2 = [[f64; 2]; 2];

fn mul(a: &M2, b: &M2) -> M2 {
    let mut out = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

fn mulv(a: &M2, v: [f64; 2]) -> [f64; 2] {
    [a[0][0] * v[0] + a[0][1] * v[1], a[1][0] * v[0] + a[1][1] * v[1]]
}

fn sub(a: &M2, b: &M2) -> M2 {
    [[a[0][0] - b[0][0], a[0][1] - b[0][1]], [a[1][0] - b[1][0], a[1][1] - b[1][1]]]
}

fn inv(a: &M2) -> M2 {
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    [[a[1][1] / det, -a[0][1] / det], [-a[1][0] / det, a[0][0] / det]]
}

/// Block-tridiagonal solve with 2×2 blocks.
fn block_thomas(lower: &[M2], diag: &[M2], upper: &[M2], rhs: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let n = diag.len();
    let mut cp: Vec<M2> = vec![[[0.0; 2]; 2]; n];
    let mut dp = vec![[0.0; 2]; n];
    let mut m = inv(&diag[0]);
    cp[0] = mul(&m, &upper[0]);
    dp[0] = mulv(&m, rhs[0]);
    for i in 1..n {
        m = inv(&sub(&diag[i], &mul(&lower[i], &cp[i - 1])));
        cp[i] = mul(&m, &upper[i]);
        let l = mulv(&lower[i], dp[i - 1]);
        dp[i] = mulv(&m, [rhs[i][0] - l[0], rhs[i][1] - l[1]]);
    }
    let mut x = vec![[0.0; 2]; n];
    x[n - 1] = dp[n - 1];
    for i in (0..n - 1).rev() {
        let u = mulv(&cp[i], x[i + 1]);
        x[i] = [dp[i][0] - u[0], dp[i][1] - u[1]];
    }
    x
}

/// Value-form residual at interior node `i` of the padded arrays.
fn residual(inst: &ProblemInstance, x: &[f64], z: &[Vec<f64>; 2], h: f64, i: usize) -> [f64; 2] {
    let mut out = [0.0; 2];
    for r in Regime::BOTH {
        let (j, o) = (r.index(), r.other().index());
        let a = inst.leave_rate(r);
        let s = 0.5 * inst.sigma(r).powi(2);
        let zj = &z[j];
        let lap = (zj[i + 1] - 2.0 * zj[i] + zj[i - 1]) / (h * h);
        let grad = (zj[i + 1] - zj[i - 1]) / (2.0 * h);
        out[j] = -a * z[o][i] + (a + inst.alpha(r)) * zj[i] - s * lap - inst.cost(r).value(&[x[i]])
            + 0.25 * grad * grad;
    }
    out
}

pub struct NewtonSolution {
    pub x: Vec<f64>,
    /// `[z₁, z₂]` at every node, endpoints (zero) included.
    pub z: [Vec<f64>; 2],
    pub iterations: usize,
    pub residual: f64,
}

/// Damped Newton on the central-difference discretization of the coupled
/// value system with `z = 0` at `±R`, starting from `z = 0`.
pub fn solve_value_system(inst: &ProblemInstance, n: usize) -> NewtonSolution {
    assert_eq!(inst.n, 1);
    let x = nodes(inst.radius, n);
    let h = x[1] - x[0];
    let m = n - 2;
    let mut z = [vec![0.0; n], vec![0.0; n]];
    let norm = |inst: &ProblemInstance, z: &[Vec<f64>; 2]| {
        (1..n - 1)
            .map(|i| {
                let r = residual(inst, &x, z, h, i);
                r[0].abs().max(r[1].abs())
            })
            .fold(0.0, f64::max)
    };
    let mut current = norm(inst, &z);
    let mut iterations = 0;
    while iterations < 100 {
        iterations += 1;
        let mut lower = vec![[[0.0; 2]; 2]; m];
        let mut diag = vec![[[0.0; 2]; 2]; m];
        let mut upper = vec![[[0.0; 2]; 2]; m];
        let mut rhs = vec![[0.0; 2]; m];
        for k in 0..m {
            let i = k + 1;
            let r = residual(inst, &x, &z, h, i);
            for reg in Regime::BOTH {
                let (j, o) = (reg.index(), reg.other().index());
                let a = inst.leave_rate(reg);
                let s = 0.5 * inst.sigma(reg).powi(2);
                let grad = (z[j][i + 1] - z[j][i - 1]) / (2.0 * h);
                diag[k][j][j] = a + inst.alpha(reg) + 2.0 * s / (h * h);
                diag[k][j][o] = -a;
                lower[k][j][j] = -s / (h * h) - 0.5 * grad / (2.0 * h);
                upper[k][j][j] = -s / (h * h) + 0.5 * grad / (2.0 * h);
                rhs[k][j] = -r[j];
            }
        }
        let step = block_thomas(&lower, &diag, &upper, &rhs);
        let step_max = step.iter().fold(0.0f64, |a, s| a.max(s[0].abs()).max(s[1].abs()));
        let mut theta = 1.0;
        loop {
            let mut trial = z.clone();
            for k in 0..m {
                trial[0][k + 1] += theta * step[k][0];
                trial[1][k + 1] += theta * step[k][1];
            }
            let t = norm(inst, &trial);
            if t < current || theta < 1e-6 {
                z = trial;
                current = t;
                break;
            }
            theta *= 0.5;
        }
        if step_max * theta < 1e-14 || current < 1e-12 {
            break;
        }
    }
    NewtonSolution {
        x,
        z,
        iterations,
        residual: current,
    }
}

/// Newton on the scalar transformed problem
/// `(u_{i+1} − 2u_i + u_{i−1})/h² = u_i (f(x_i)/σ⁴ + c ln u_i)`, `u(±R) = 1`,
/// with `c = 2(a+α)/σ²`. Returns `u` at every node.
pub fn solve_scalar_transformed(inst: &ProblemInstance, regime: Regime, n: usize) -> Vec<f64> {
    let x = nodes(inst.radius, n);
    let h = x[1] - x[0];
    let s2 = inst.sigma(regime).powi(2);
    let c = 2.0 * (inst.leave_rate(regime) + inst.alpha(regime)) / s2;
    let f: Vec<f64> = x.iter().map(|&v| inst.cost(regime).value(&[v]) / (s2 * s2)).collect();
    let mut u: Vec<f64> = vec![1.0; n];
    for _ in 0..100 {
        let m = n - 2;
        let (mut a, mut b, mut cc, mut d) = (vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m]);
        let mut rmax: f64 = 0.0;
        for k in 0..m {
            let i = k + 1;
            let g = u[i] * (f[i] + c * u[i].ln());
            let dg = f[i] + c * u[i].ln() + c;
            let r = (u[i + 1] - 2.0 * u[i] + u[i - 1]) / (h * h) - g;
            rmax = rmax.max(r.abs());
            a[k] = 1.0 / (h * h);
            cc[k] = 1.0 / (h * h);
            b[k] = -2.0 / (h * h) - dg;
            d[k] = -r;
        }
        let step = thomas(&a, &b, &cc, &d);
        let smax = step.iter().fold(0.0f64, |m, s| m.max(s.abs()));
        for k in 0..m {
            // stay inside (0, 1]
            u[k + 1] = (u[k + 1] + step[k]).clamp(1e-300, 1.0);
        }
        if smax < 1e-15 {
            break;
        }
    }
    u
}
