//! Symmetric block-matrix inequalities over named decision variables.

pub mod affine;
pub mod program;
pub mod theorem1;
pub mod theorem2;
pub mod vars;
pub mod verify;

pub use affine::{AffineMatrix, BlockError, SymmetricBlocks};
pub use program::{LmiProgram, MatrixInequality, ProgramStats, Sense};
pub use theorem1::{
    assemble_psi, assemble_theorem1, psi_block_sizes, psi_dim, DesignVars, LmiError, OmegaMode,
    SynthesisGivens,
};
pub use theorem2::{
    assemble_theorem2, compute_fou_bounds, CornerBound, FouPartition, SlackVars, DEFAULT_ROW_CAP,
};
pub use vars::{Sign, VarId, VarKind, VarTable};
pub use verify::{verify_design, Certificates, VerificationReport};
