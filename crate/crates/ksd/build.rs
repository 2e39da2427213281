// LAPACK provider. `ndarray-linalg` is used without a bundled backend because the
// `openblas-src` build helper does not compile on this toolchain; the system
// OpenBLAS (which ships LAPACK symbols) is linked directly instead.
fn main() {
    println!("cargo:rustc-link-lib=dylib=openblas");
}
