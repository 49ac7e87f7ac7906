/// Catmull-Rom interpolation of samples `values[i]` at `x0 + i·dx`; ends
/// are extended by repeating the boundary sample and arguments outside the
/// grid are clamped.
pub fn catmull_rom(values: &[f64], x0: f64, dx: f64, x: f64) -> f64 {
    let n = values.len();
    if n == 1 {
        return values[0];
    }
    let s = ((x - x0) / dx).clamp(0.0, (n - 1) as f64);
    let i = (s.floor() as usize).min(n - 2);
    let u = s - i as f64;
    let at = |k: isize| values[k.clamp(0, n as isize - 1) as usize];
    let (p0, p1, p2, p3) = (at(i as isize - 1), at(i as isize), at(i as isize + 1), at(i as isize + 2));
    if u == 0.0 {
        return p1;
    }
    let u2 = u * u;
    let u3 = u2 * u;
    0.5 * (2.0 * p1 + (p2 - p0) * u + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * u2 + (3.0 * p1 - 3.0 * p2 + p3 - p0) * u3)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproduces_nodes_and_quadratics() {
        let xs: Vec<f64> = (0..20).map(|i| 0.125 * i as f64).collect();
        let v: Vec<f64> = xs.iter().map(|x| 3.0 * x * x - x + 2.0).collect();
        for (i, x) in xs.iter().enumerate() {
            assert_eq!(catmull_rom(&v, 0.0, 0.125, *x), v[i]);
        }
        for k in 10..140 {
            let x = 0.015 * k as f64;
            let exact = 3.0 * x * x - x + 2.0;
            assert!((catmull_rom(&v, 0.0, 0.125, x) - exact).abs() < 1e-12, "{x}");
        }
    }

    #[test]
    fn clamps_outside() {
        let v = [1.0, 2.0, 4.0];
        assert_eq!(catmull_rom(&v, 0.0, 1.0, -5.0), 1.0);
        assert_eq!(catmull_rom(&v, 0.0, 1.0, 9.0), 4.0);
    }
}
