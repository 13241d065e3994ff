//! The bundled three-rule example used by tests, benches and the CLI.

use crate::config::ToolkitConfig;
use crate::expr::Expr;
use crate::model::{IT2Plant, MembershipSpec};

pub const EXAMPLE1_TOML: &str = include_str!("../fixtures/example1.toml");

pub fn example1_config() -> ToolkitConfig {
    ToolkitConfig::from_toml_str(EXAMPLE1_TOML).expect("bundled example config is valid")
}

pub fn example1_plant() -> IT2Plant {
    example1_config().plant().expect("bundled plant is valid")
}

pub fn example1_controller_memberships() -> MembershipSpec {
    example1_config().controller.memberships
}

pub fn example1_disturbance() -> Expr {
    example1_config().sim.disturbance
}
