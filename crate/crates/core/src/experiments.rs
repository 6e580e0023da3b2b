//! Study drivers and configuration (placeholder).
