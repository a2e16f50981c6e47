//! Library side of the `copulagraph` command: dataset files, single runs and
//! the repeated-trial reproductions.

pub mod dataset;
pub mod reproduce;
pub mod run;
