#include "taprune/workbench/sweep.hpp"

#include <numeric>
#include <sstream>

#include "taprune/error.hpp"

namespace taprune::workbench {

double SweepPoint::mean() const
{
    if (target_test.empty()) return 0.0;
    return std::accumulate(target_test.begin(), target_test.end(), 0.0) / static_cast<double>(target_test.size());
}

const SweepPoint& SweepResult::at(double fraction, double sparsity) const
{
    for (const auto& p : points) {
        if (p.fraction == fraction && p.sparsity == sparsity) return p;
    }
    throw ConfigError("sweep has no point at fraction " + std::to_string(fraction) + ", sparsity " +
                      std::to_string(sparsity));
}

double SweepResult::drop(double fraction, double low, double high) const
{
    return at(fraction, low).mean() - at(fraction, high).mean();
}

std::string SweepResult::to_csv() const
{
    std::ostringstream s;
    s << "fraction,sparsity,seeds,mean_target_test\n";
    for (const auto& p : points) s << p.fraction << ',' << p.sparsity << ',' << p.target_test.size() << ',' << p.mean() << '\n';
    return s.str();
}

SweepResult data_fraction_sweep(const ExperimentConfig& base, const std::vector<double>& fractions,
                                const std::vector<double>& sparsities, RecordSink& sink, RunCache& cache,
                                const MatrixOptions& options)
{
    if (fractions.empty() || sparsities.empty()) throw ConfigError("sweep needs fractions and sparsities");
    for (double f : fractions) {
        if (!(f > 0.0 && f <= 1.0)) throw ConfigError("sweep fractions must lie in (0, 1]");
    }
    MatrixGrid grid;
    grid.base = base;
    grid.base.schedule = pipeline::no_transfer_baseline(base.schedule);
    grid.base.ablation.reset();
    grid.sparsities = sparsities;
    for (double f : fractions) grid.target_caps.emplace_back(f);

    SweepResult out;
    out.records = run_matrix(grid, sink, cache, options).records;

    // expand() nests sparsity outside the cap axis; regroup fraction-major.
    const std::size_t n_seeds = grid.base.schedule.seeds.size();
    for (std::size_t fi = 0; fi < fractions.size(); ++fi) {
        for (std::size_t si = 0; si < sparsities.size(); ++si) {
            SweepPoint p;
            p.fraction = fractions[fi];
            p.sparsity = sparsities[si];
            const std::size_t config_index = si * fractions.size() + fi;
            for (std::size_t k = 0; k < n_seeds; ++k) {
                const auto& r = out.records[config_index * n_seeds + k];
                if (r.ok()) p.target_test.push_back(r.target_test);
            }
            out.points.push_back(std::move(p));
        }
    }
    return out;
}

}  // namespace taprune::workbench
