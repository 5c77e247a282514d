pub mod config;
pub mod garnet;
pub mod io;
pub mod run;
