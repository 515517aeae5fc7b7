#pragma once
// Demo deployment seeded into fresh stores: one campus site, one building
// with two floors, rooms, sensors, people, organisations, and permissions.
// Tests and the CLI's demo mode share it.

#include "trellis/metastore.hpp"

namespace trellis {

void seed_demo_metadata(MetadataStore& store);

// Timestamps the seed data is written at.
Timestamp demo_seed_ts();     // crates, orgs, people, permissions
Timestamp demo_sensor_ts();   // sensor metadata

}  // namespace trellis
