//! Service launchers and the control-port facade behind `gesture-relay`.

pub mod cli;
pub mod commands;
pub mod control;
pub mod publish;
