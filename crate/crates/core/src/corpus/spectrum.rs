/// Energy of the mean-removed grayscale image in the radial frequency band
/// `(lo, hi]` (cycles per pixel). Normalized so the energy over all
/// frequencies equals the pixel variance.
pub fn band_energy(pixels: &[f64], size: usize, lo: f64, hi: f64) -> f64 {
    band_energies(pixels, size, &[lo, hi])[0]
}

/// Energies in the consecutive bands `(edges[i], edges[i + 1]]` from a
/// single transform.
pub fn band_energies(pixels: &[f64], size: usize, edges: &[f64]) -> Vec<f64> {
    let n = size * size;
    let gray: Vec<f64> = pixels.chunks_exact(3).map(|c| (c[0] + c[1] + c[2]) / 3.0).collect();
    let mean = gray.iter().sum::<f64>() / n as f64;
    let (re, im) = dft2(&gray.iter().map(|g| g - mean).collect::<Vec<_>>(), size);
    let mut e = vec![0.0; edges.len().saturating_sub(1)];
    for v in 0..size {
        for u in 0..size {
            let r = (freq(u, size).powi(2) + freq(v, size).powi(2)).sqrt();
            if let Some(b) = edges.windows(2).position(|w| r > w[0] && r <= w[1]) {
                let k = v * size + u;
                e[b] += re[k] * re[k] + im[k] * im[k];
            }
        }
    }
    e.iter().map(|x| x / (n * n) as f64).collect()
}

fn freq(k: usize, size: usize) -> f64 {
    let k = if k > size / 2 { k as f64 - size as f64 } else { k as f64 };
    k / size as f64
}

/// Separable 2-D discrete Fourier transform of a real `size × size` image.
fn dft2(x: &[f64], size: usize) -> (Vec<f64>, Vec<f64>) {
    let tau = std::f64::consts::TAU;
    let cos: Vec<f64> = (0..size).map(|k| (tau * k as f64 / size as f64).cos()).collect();
    let sin: Vec<f64> = (0..size).map(|k| (tau * k as f64 / size as f64).sin()).collect();
    // Rows.
    let mut rr = vec![0.0; size * size];
    let mut ri = vec![0.0; size * size];
    for y in 0..size {
        for u in 0..size {
            let (mut a, mut b) = (0.0, 0.0);
            for xx in 0..size {
                let t = (u * xx) % size;
                a += x[y * size + xx] * cos[t];
                b -= x[y * size + xx] * sin[t];
            }
            rr[y * size + u] = a;
            ri[y * size + u] = b;
        }
    }
    // Columns.
    let mut re = vec![0.0; size * size];
    let mut im = vec![0.0; size * size];
    for v in 0..size {
        for u in 0..size {
            let (mut a, mut b) = (0.0, 0.0);
            for y in 0..size {
                let t = (v * y) % size;
                let (c, s) = (cos[t], sin[t]);
                a += rr[y * size + u] * c + ri[y * size + u] * s;
                b += ri[y * size + u] * c - rr[y * size + u] * s;
            }
            re[v * size + u] = a;
            im[v * size + u] = b;
        }
    }
    (re, im)
}
