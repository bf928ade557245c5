#include "taprune/pipeline/schedule.hpp"

#include "taprune/error.hpp"

namespace taprune::pipeline {

std::string TaskSet::to_string() const
{
    if (both()) return "A,T";
    if (target) return "T";
    if (auxiliary) return "A";
    return "";
}

TaskSet TaskSet::parse(const std::string& text)
{
    TaskSet s;
    std::size_t start = 0;
    while (start <= text.size()) {
        auto end = text.find(',', start);
        if (end == std::string::npos) end = text.size();
        std::string item = text.substr(start, end - start);
        while (!item.empty() && item.front() == ' ') item.erase(item.begin());
        while (!item.empty() && item.back() == ' ') item.pop_back();
        const auto role = transfer::parse_task_role(item);
        if (role == transfer::TaskRole::target) {
            s.target = true;
        } else {
            s.auxiliary = true;
        }
        start = end + 1;
    }
    return s;
}

void ScheduleSpec::validate() const
{
    if (prune_tasks.empty() || finetune_tasks.empty()) {
        throw ConfigError("schedule needs at least one task in each stage");
    }
    if (!(target_sparsity >= 0.0 && target_sparsity < 1.0)) {
        throw ConfigError("target sparsity must lie in [0, 1)");
    }
    if (seeds.empty()) throw ConfigError("schedule needs at least one seed");
    coupling.validate();
    weights.validate();
}

std::string ScheduleSpec::label() const
{
    return "Prune(" + prune_tasks.to_string() + ")->FT(" + finetune_tasks.to_string() + ")";
}

ScheduleSpec ScheduleSpec::parse(const std::string& text, const ScheduleSpec& base)
{
    std::string s = text;
    for (const char* prefix : {"Prune(", "prune("}) {
        if (s.rfind(prefix, 0) == 0) s = s.substr(6);
    }
    const auto arrow = s.find("->");
    if (arrow == std::string::npos) throw ConfigError("schedule '" + text + "' lacks '->'");
    std::string lhs = s.substr(0, arrow);
    std::string rhs = s.substr(arrow + 2);
    if (!lhs.empty() && lhs.back() == ')') lhs.pop_back();
    for (const char* prefix : {"FT(", "ft("}) {
        if (rhs.rfind(prefix, 0) == 0) rhs = rhs.substr(3);
    }
    if (!rhs.empty() && rhs.back() == ')') rhs.pop_back();
    ScheduleSpec out = base;
    out.prune_tasks = TaskSet::parse(lhs);
    out.finetune_tasks = TaskSet::parse(rhs);
    return out;
}

std::vector<ScheduleSpec> transfer_schedules(const ScheduleSpec& base)
{
    std::vector<ScheduleSpec> out;
    for (const char* s : {"A->T", "T->A,T", "A,T->T", "A,T->A,T"}) out.push_back(ScheduleSpec::parse(s, base));
    return out;
}

ScheduleSpec no_transfer_baseline(const ScheduleSpec& base) { return ScheduleSpec::parse("T->T", base); }

}  // namespace taprune::pipeline
