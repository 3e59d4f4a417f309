//! Security engines for a modeled container cluster: network policy
//! evaluation, admission-time constraint checks with audit, and an encrypted
//! secrets vault with role-based login and sidecar injection.

pub mod constraints;
pub mod model;
pub mod netpol;
pub mod vault;
