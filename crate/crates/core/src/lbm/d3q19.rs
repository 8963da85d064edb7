//! D3Q19 velocity set.
//!
//! Direction 0 is the rest population. Non-rest directions come in
//! opposite pairs `(2k-1, 2k)`.

pub const Q: usize = 19;

pub const C: [[i32; 3]; Q] = [
    [0, 0, 0],
    [1, 0, 0],
    [-1, 0, 0],
    [0, 1, 0],
    [0, -1, 0],
    [0, 0, 1],
    [0, 0, -1],
    [1, 1, 0],
    [-1, -1, 0],
    [1, -1, 0],
    [-1, 1, 0],
    [1, 0, 1],
    [-1, 0, -1],
    [1, 0, -1],
    [-1, 0, 1],
    [0, 1, 1],
    [0, -1, -1],
    [0, 1, -1],
    [0, -1, 1],
];

const W0: f64 = 1.0 / 3.0;
const W1: f64 = 1.0 / 18.0;
const W2: f64 = 1.0 / 36.0;

pub const W: [f64; Q] = [W0, W1, W1, W1, W1, W1, W1, W2, W2, W2, W2, W2, W2, W2, W2, W2, W2, W2, W2];

/// Index of the reversed direction.
pub const fn opposite(i: usize) -> usize {
    if i == 0 {
        0
    } else if i % 2 == 1 {
        i + 1
    } else {
        i - 1
    }
}

pub fn c_f64(i: usize) -> [f64; 3] {
    [C[i][0] as f64, C[i][1] as f64, C[i][2] as f64]
}

/// Second-order equilibrium populations.
#[inline]
pub fn equilibrium(rho: f64, u: [f64; 3]) -> [f64; Q] {
    let mut feq = [0.0; Q];
    equilibrium_into(rho, u, &mut feq);
    feq
}

#[inline(always)]
pub fn equilibrium_into(rho: f64, u: [f64; 3], feq: &mut [f64; Q]) {
    let usq = 1.5 * (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]);
    for i in 0..Q {
        let cu = 3.0 * (C[i][0] as f64 * u[0] + C[i][1] as f64 * u[1] + C[i][2] as f64 * u[2]);
        feq[i] = W[i] * rho * (1.0 + cu + 0.5 * cu * cu - usq);
    }
}

/// Density and velocity moments of a population set.
#[inline(always)]
pub fn moments(f: &[f64]) -> (f64, [f64; 3]) {
    let mut rho = 0.0;
    let mut j = [0.0; 3];
    for i in 0..Q {
        rho += f[i];
        j[0] += C[i][0] as f64 * f[i];
        j[1] += C[i][1] as f64 * f[i];
        j[2] += C[i][2] as f64 * f[i];
    }
    (rho, [j[0] / rho, j[1] / rho, j[2] / rho])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_and_pairs() {
        let total: f64 = W.iter().sum();
        assert!((total - 1.0).abs() < 1e-15);
        for i in 0..Q {
            let o = opposite(i);
            assert_eq!(opposite(o), i);
            for d in 0..3 {
                assert_eq!(C[i][d], -C[o][d]);
            }
        }
    }

    #[test]
    fn rest_equilibrium_is_weights() {
        let f = equilibrium(1.0, [0.0; 3]);
        assert_eq!(f, W);
        assert_eq!(f[0], 1.0 / 3.0);
        assert_eq!(f[1], 1.0 / 18.0);
        assert_eq!(f[7], 1.0 / 36.0);
    }

    #[test]
    fn first_moments_reproduce_inputs() {
        let f = equilibrium(1.05, [0.02, 0.0, 0.0]);
        let rho: f64 = f.iter().sum();
        assert!((rho - 1.05).abs() < 1e-14);
        let (r, u) = moments(&f);
        assert!((r - 1.05).abs() < 1e-14);
        assert!((u[0] * r - 1.05 * 0.02).abs() < 1e-14);
        assert!(u[1].abs() < 1e-14 && u[2].abs() < 1e-14);
    }

    #[test]
    fn second_moment_matches_isothermal_stress() {
        let rho = 1.0;
        let u = [0.05, 0.02, -0.01];
        let f = equilibrium(rho, u);
        for a in 0..3 {
            for b in 0..3 {
                let mut sum = 0.0;
                for i in 0..Q {
                    sum += f[i] * C[i][a] as f64 * C[i][b] as f64;
                }
                let delta = if a == b { 1.0 / 3.0 } else { 0.0 };
                let expected = rho * (delta + u[a] * u[b]);
                assert!((sum - expected).abs() < 1e-14, "({a},{b}): {sum} vs {expected}");
            }
        }
    }
}
