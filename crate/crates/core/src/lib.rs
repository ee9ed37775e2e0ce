//! Bit-accurate CAN 2.0A bus simulation with a CANTX-tap monitoring node.
pub mod attacks;
pub mod bus;
pub mod codec;
pub mod controller;
pub mod error;
pub mod harness;
pub mod officer;
pub mod traffic;
