//! Hosts the acceptance test target, which runs after the core test binaries.
