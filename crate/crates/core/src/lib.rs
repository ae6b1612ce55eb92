pub mod dual;
pub mod elastic;
pub mod error;
pub mod fd;
pub mod forward;
pub mod greens;
pub mod inverse;
pub mod mesh;
pub mod predicates;
pub mod quadrature;
pub mod rect;

pub use elastic::{LameField, LameParameters, SymTensor2, Tensor2, Vec3};
pub use error::{Error, Result};
