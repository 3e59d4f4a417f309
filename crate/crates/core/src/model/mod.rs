//! Cluster object model shared by every engine.

mod labels;
pub mod manifest;
mod objects;
mod quantity;
mod state;

use thiserror::Error;

pub use labels::{selector_matches, LabelMap, Operator, Requirement, Selector, NAMESPACE_NAME_LABEL};
pub use manifest::{parse_manifest, parse_manifests, Format, Manifest, ManifestError};
pub use objects::{
    Container, ObjectMeta, ObjectRef, Pod, PodRef, PodSpec, PodTemplate, Probe, Resource,
    ResourceList, Resources, Subject, SubjectKind, Volume, VolumeMount, WorkloadKind,
    WorkloadObject, DEFAULT_NAMESPACE, DEFAULT_SERVICE_ACCOUNT,
};
pub use quantity::{parse_quantity, Quantity, QuantityError, ResourceKind};
pub use state::{ClusterState, Namespace, StateError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("{0}")]
    InvalidLabel(String),
    #[error("invalid selector: {0}")]
    InvalidSelector(String),
    #[error("invalid CIDR {0:?}")]
    InvalidCidr(String),
    #[error("{0}")]
    Invalid(String),
}
