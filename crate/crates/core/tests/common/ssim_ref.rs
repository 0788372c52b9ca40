use ndarray::Array2;

/// Direct 2-D sliding window, no separability.
pub fn reference_ssim_terms(a: &Array2<f64>, b: &Array2<f64>, range: f64) -> (Array2<f64>, Array2<f64>) {
    let w = 11;
    let g: Vec<f64> = (0..w).map(|i| (-((i as f64 - 5.0).powi(2)) / 4.5).exp()).collect();
    let gs: f64 = g.iter().sum();
    let (c1, c2) = ((0.01 * range).powi(2), (0.03 * range).powi(2));
    let (m, n) = a.dim();
    let mut lum = Array2::zeros((m - w + 1, n - w + 1));
    let mut cs = lum.clone();
    for i in 0..=m - w {
        for j in 0..=n - w {
            let (mut ma, mut mb, mut aa, mut bb, mut ab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for u in 0..w {
                for v in 0..w {
                    let k = g[u] * g[v] / (gs * gs);
                    let (x, y) = (a[(i + u, j + v)], b[(i + u, j + v)]);
                    ma += k * x;
                    mb += k * y;
                    aa += k * x * x;
                    bb += k * y * y;
                    ab += k * x * y;
                }
            }
            let (va, vb, cov) = (aa - ma * ma, bb - mb * mb, ab - ma * mb);
            lum[(i, j)] = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
            cs[(i, j)] = (2.0 * cov + c2) / (va + vb + c2);
        }
    }
    (lum, cs)
}
