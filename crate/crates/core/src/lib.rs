//! A software model of a match-action switch pipeline that encrypts UDP and
//! RoCEv2 payloads with AES-128 built entirely from per-round lookup tables,
//! one round per recirculation pass.

pub mod aes_core;
pub mod control_plane;
pub mod packet;
pub mod pipeline;
pub mod traffic;
pub mod ttables;
