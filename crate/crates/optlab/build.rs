fn main() {
    // BLAS/LAPACK routines (dgemv, dgels, ...) come from the system OpenBLAS.
    println!("cargo:rustc-link-lib=dylib=openblas");
}
