//! Dense block SDP solver and the sum-of-squares layer built on it.

mod sdp;
mod sos;

pub use sdp::{
    solve_sdp, BlockEntry, IterationRecord, LinearFunctional, SdpConstraint, SdpError, SdpProblem,
    SdpSolution, SdpStatus,
};
pub use sos::{
    compile, gram_basis, gram_polynomial, monomials_in_range, prove_sos, solve_sos_program,
    substitute, CompiledSos, Decision, GramCertificate, Multiplier, Sign, SosConstraint, SosError,
    SosProgram, SosSolution, GRAM_PSD_SHIFT, GRAM_RESIDUAL_TOL,
};
