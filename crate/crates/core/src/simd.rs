//! faer's SIMD kernels can return with the upper halves of the AVX registers
//! dirty. Until a `vzeroupper`, every SSE-encoded instruction (libm, and our
//! own scalar code) pays a transition penalty of roughly 10x. Call this after
//! each faer kernel.

#[inline]
pub(crate) fn clear_upper_state() {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx") {
        // SAFETY: AVX support was checked at runtime.
        unsafe { zero_upper() }
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx")]
unsafe fn zero_upper() {
    std::arch::x86_64::_mm256_zeroupper()
}
