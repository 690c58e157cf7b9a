// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "simdet/errors.hpp"

namespace simdet {

// Time-ordered alloc/free byte events with running and peak accounting.
// Meters activation tensors; weights and optimizer state are accounted
// separately by the trainer.
class MemoryTrace {
public:
    struct Event {
        bool alloc;
        int64_t bytes;
        std::string tag;
        int64_t running; // after the event
    };

    void on_alloc(int64_t bytes, const std::string& tag);
    void on_free(int64_t bytes, const std::string& tag);

    int64_t running() const { return running_; }
    int64_t peak() const { return peak_; }
    // peak over events carrying exactly this tag
    int64_t peak_for_tag(const std::string& tag) const;
    int64_t running_for_tag(const std::string& tag) const;

    const std::vector<Event>& events() const { return events_; }
    void clear();
    // collapse peaks down to the current running totals (per-step metering)
    void reset_peak();

    // rows: event,bytes,tag,running,peak
    void write_csv(std::ostream& os) const;

private:
    std::vector<Event> events_;
    int64_t running_ = 0;
    int64_t peak_ = 0;
    std::map<std::string, std::pair<int64_t, int64_t>> by_tag_; // running, peak
};

// Max prefix sum of the signed event sequence; validates balance.
int64_t peak_memory(const std::vector<MemoryTrace::Event>& events);

} // namespace simdet
