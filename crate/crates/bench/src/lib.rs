//! Seeded inputs shared by the benchmarks.

use std::sync::Arc;

use rigidity_lab::lab::{generate_field, Controlled, GeneratedField, NoiseModel};
use rigidity_lab::{make_domain, DomainKind, GridDomain};

pub fn square(resolution: usize) -> Arc<GridDomain> {
    Arc::new(make_domain(DomainKind::Square, 2, 1.0, resolution, 0.0).expect("square domain"))
}

/// A default mixed-model field with `parts` majorants.
pub fn mixed_field(domain: &Arc<GridDomain>, controlled: Controlled, parts: usize) -> GeneratedField {
    generate_field(&NoiseModel::default(), controlled, parts, domain, 0).expect("generated field")
}
