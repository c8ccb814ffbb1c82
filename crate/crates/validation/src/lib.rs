//! Holds the end-to-end acceptance suite; run it with
//! `cargo test -p fsnn-validation --test acceptance`.
