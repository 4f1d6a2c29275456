pub mod dynamics;
pub mod edge;
pub mod error;
pub mod fitting;
pub mod linalg;
pub mod model;
pub mod presets;
pub mod scattering;
pub mod sigproc;
pub mod spectral;

pub use error::{Error, Result};
pub use model::{build_hamiltonian, site_roles, LabeledHamiltonian, ModelParams, SiteRoles};
