//! Regional brain age estimation from a whole-brain teacher.

pub mod backbone;
pub mod config;
pub mod datagen;
pub mod io;
pub mod metrics;
pub mod parcellate;
pub mod pipeline;
pub mod seed;
pub mod volume;
pub mod teacher;
pub mod student;
