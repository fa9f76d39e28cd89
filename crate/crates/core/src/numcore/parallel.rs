//! Column-parallel evaluation with a fixed output order.
//!
//! Results are written into their own column slots, so the output does not
//! depend on how columns are distributed over threads.

use nalgebra::DMatrix;

/// Thread budget: `OEDSTEER_THREADS` if set, otherwise the available
/// hardware parallelism.
pub fn thread_budget() -> usize {
    std::env::var("OEDSTEER_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
}

/// Apply `f` to every column of `x`, producing a matrix with `out_rows` rows.
pub fn map_columns<F>(x: &DMatrix<f64>, out_rows: usize, f: F) -> DMatrix<f64>
where
    F: Fn(&[f64]) -> Vec<f64> + Sync,
{
    let ncols = x.ncols();
    let nrows = x.nrows();
    let mut out = DMatrix::<f64>::zeros(out_rows, ncols);
    if ncols == 0 {
        return out;
    }
    let threads = thread_budget().min(ncols);
    let input = x.as_slice();
    let column = |j: usize| &input[j * nrows..(j + 1) * nrows];
    if threads <= 1 {
        for j in 0..ncols {
            let y = f(column(j));
            out.column_mut(j).copy_from_slice(&y);
        }
        return out;
    }
    let chunk = ncols.div_ceil(threads);
    let out_slice = out.as_mut_slice();
    std::thread::scope(|scope| {
        for (t, block) in out_slice.chunks_mut(chunk * out_rows).enumerate() {
            let f = &f;
            scope.spawn(move || {
                for (local, dst) in block.chunks_mut(out_rows).enumerate() {
                    let j = t * chunk + local;
                    dst.copy_from_slice(&f(column(j)));
                }
            });
        }
    });
    out
}
