//! Dense-grid loop oracle for submanifold 3D convolution.

/// Output at every occupied site of a `d³` grid: `bias + Σ` over the 3×3×3
/// neighbourhood of occupied inputs times the tap weight. Weight layout is
/// `[27][c_in][c_out]`, tap index `9·(dx+1) + 3·(dy+1) + (dz+1)`.
pub fn dense_submanifold_conv(
    d: usize,
    sites: &[[i32; 3]],
    features: &[f64],
    c_in: usize,
    weight: &[f64],
    bias: &[f64],
) -> Vec<f64> {
    let c_out = bias.len();
    let cell = |x: i32, y: i32, z: i32| (x as usize * d + y as usize) * d + z as usize;
    let mut grid = vec![0.0; d * d * d * c_in];
    let mut occupied = vec![false; d * d * d];
    for (s, p) in sites.iter().enumerate() {
        let c = cell(p[0], p[1], p[2]);
        occupied[c] = true;
        grid[c * c_in..(c + 1) * c_in].copy_from_slice(&features[s * c_in..(s + 1) * c_in]);
    }
    let inside = |v: i32| v >= 0 && (v as usize) < d;
    let mut out = vec![0.0; sites.len() * c_out];
    for (s, p) in sites.iter().enumerate() {
        for o in 0..c_out {
            let mut acc = bias[o];
            for dx in -1..=1 {
                for dy in -1..=1 {
                    for dz in -1..=1 {
                        let (x, y, z) = (p[0] + dx, p[1] + dy, p[2] + dz);
                        if !(inside(x) && inside(y) && inside(z)) || !occupied[cell(x, y, z)] {
                            continue;
                        }
                        let tap = (9 * (dx + 1) + 3 * (dy + 1) + (dz + 1)) as usize;
                        let q = cell(x, y, z);
                        for i in 0..c_in {
                            acc += grid[q * c_in + i] * weight[(tap * c_in + i) * c_out + o];
                        }
                    }
                }
            }
            out[s * c_out + o] = acc;
        }
    }
    out
}
