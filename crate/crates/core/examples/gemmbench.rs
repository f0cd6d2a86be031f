use std::time::Instant;
fn main() {
    // typical im2col GEMM shape for our convs: (c_out) x (k*k*c_in) x (h*w)
    for &(m, k, n) in &[(64usize, 512usize, 256usize), (128, 1152, 64), (32, 343, 1024)] {
        let a = vec![1.0f32; m * k];
        let b = vec![0.5f32; k * n];
        let mut c = vec![0.0f32; m * n];
        let t = Instant::now();
        let reps = 200;
        for _ in 0..reps {
            unsafe {
                matrixmultiply::sgemm(
                    m, k, n, 1.0, a.as_ptr(), k as isize, 1, b.as_ptr(), n as isize, 1, 0.0,
                    c.as_mut_ptr(), n as isize, 1,
                );
            }
        }
        let dt = t.elapsed().as_secs_f64();
        let flops = 2.0 * (m * k * n * reps) as f64 / dt / 1e9;
        println!("m{m} k{k} n{n}: {flops:.1} GFLOP/s");
    }
}
