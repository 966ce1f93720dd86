fn main() {
    // Hermitian eigensolves and linear solves go through the system LAPACK.
    println!("cargo:rustc-link-lib=dylib=lapack");
    println!("cargo:rustc-link-lib=dylib=blas");
}
