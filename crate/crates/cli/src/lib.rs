//! Command line and HTTP front end for [`xattn`].

pub mod commands;
pub mod config;
pub mod service;
