fn main() {
    // Dense factorizations go through the system BLAS/LAPACK (OpenBLAS).
    println!("cargo:rustc-link-lib=dylib=openblas");
}
