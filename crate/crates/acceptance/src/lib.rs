//! Acceptance suite for the advnf workspace. The criteria live in `tests/acceptance.rs`.
