#pragma once

// Infrastructure-aware energy model for LLM API calls and CPU-side stages.
//
// An LLM call is charged for its wall time at the effective power of the
// serving node share it occupies:
//
//   u_gpu    = G * D_gpu    / (N * B)
//   u_nongpu = G * D_nongpu / (N * B)
//   W        = P_gpu * u_gpu + P_nongpu * u_nongpu        [kW]
//   E        = hours * W * PUE                             [kWh]
//
// CPU stages (retrieval, cosine grounding) are charged per core:
//   E = hours * core_power * core_count * PUE.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <initializer_list>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ragenergy/error.hpp"

namespace ragenergy {

inline constexpr double kSecondsPerHour = 3600.0;

enum class StageKind { classification, retrieval, llm_inference, hallucination_check };
enum class Executor { cpu, llm };

inline constexpr std::array<StageKind, 4> kAllStageKinds = {
    StageKind::classification, StageKind::retrieval, StageKind::llm_inference,
    StageKind::hallucination_check};

constexpr std::string_view to_string(StageKind kind) noexcept {
  switch (kind) {
    case StageKind::classification: return "classification";
    case StageKind::retrieval: return "retrieval";
    case StageKind::llm_inference: return "llm_inference";
    case StageKind::hallucination_check: return "hallucination_check";
  }
  return "?";
}

constexpr std::string_view to_string(Executor executor) noexcept {
  return executor == Executor::cpu ? "cpu" : "llm";
}

inline StageKind parse_stage_kind(std::string_view text) {
  for (auto kind : kAllStageKinds) {
    if (to_string(kind) == text) return kind;
  }
  throw Error(Errc::schema, "unknown stage kind '" + std::string(text) +
                                "' (expected classification, retrieval, llm_inference, hallucination_check)");
}

inline Executor parse_executor(std::string_view text) {
  if (text == "cpu") return Executor::cpu;
  if (text == "llm") return Executor::llm;
  throw Error(Errc::schema, "unknown executor '" + std::string(text) + "' (expected cpu or llm)");
}

struct HardwareParams {
  std::string model_id;
  int gpus_per_model = 0;        // G
  int gpus_per_node = 1;         // N
  int batch_size = 1;            // B
  double gpu_draw_fraction = 0;  // D_gpu
  double non_gpu_draw_fraction = 0;
  double node_gpu_kw = 0;        // P_gpu
  double node_non_gpu_kw = 0;
  double pue = 1.0;
};

/// Serving-side parameters of one model family. Invariants are checked on
/// construction, so the energy functions below never fail on a profile.
class HardwareProfile {
 public:
  explicit HardwareProfile(HardwareParams params) : p_(std::move(params)) {
    auto fail = [&](const std::string& what) {
      throw Error(Errc::invalid_parameter, "hardware profile '" + p_.model_id + "': " + what);
    };
    if (p_.gpus_per_model < 0) fail("gpus_per_model must be >= 0");
    if (p_.gpus_per_node < 1) fail("gpus_per_node must be >= 1");
    if (p_.batch_size < 1) fail("batch_size must be >= 1");
    if (!(p_.gpu_draw_fraction >= 0) || !(p_.non_gpu_draw_fraction >= 0)) fail("draw fractions must be >= 0");
    if (!(p_.node_gpu_kw >= 0) || !(p_.node_non_gpu_kw >= 0)) fail("node powers must be >= 0");
    if (!(p_.pue >= 1.0) || !std::isfinite(p_.pue)) fail("pue must be >= 1");
  }

  [[nodiscard]] const HardwareParams& params() const noexcept { return p_; }
  [[nodiscard]] const std::string& model_id() const noexcept { return p_.model_id; }

 private:
  HardwareParams p_;
};

struct CpuProfile {
  double core_power_kw = 0.0085;
  double pue = 1.09;
  int core_count = 1;

  void validate() const {
    if (!(core_power_kw > 0)) throw Error(Errc::invalid_parameter, "cpu core_power must be > 0");
    if (!(pue >= 1.0)) throw Error(Errc::invalid_parameter, "cpu pue must be >= 1");
    if (core_count < 1) throw Error(Errc::invalid_parameter, "cpu core_count must be >= 1");
  }
};

struct ThroughputEstimate {
  double output_length = 0;      // tokens
  double tokens_per_second = 0;  // TPS
  double latency_s = 0;          // time to first token
};

struct UtilizationFractions {
  double gpu = 0;
  double non_gpu = 0;
};

struct EnergyBreakdown {
  double retrieval_kwh = 0;
  double inference_kwh = 0;
  double hallucination_kwh = 0;
  double total_kwh = 0;

  friend bool operator==(const EnergyBreakdown&, const EnergyBreakdown&) = default;
};

/// The four kW figures the model derives from a profile; handy for tables.
struct PowerTerms {
  double gpu_kw = 0;      // P_gpu * u_gpu
  double non_gpu_kw = 0;  // P_nongpu * u_nongpu
  double node_kw = 0;     // W
  double effective_kw = 0;  // W * PUE
};

inline UtilizationFractions utilization_fractions(const HardwareProfile& profile) noexcept {
  const auto& p = profile.params();
  const double share = static_cast<double>(p.gpus_per_model) /
                       (static_cast<double>(p.gpus_per_node) * static_cast<double>(p.batch_size));
  return {share * p.gpu_draw_fraction, share * p.non_gpu_draw_fraction};
}

inline PowerTerms power_terms(const HardwareProfile& profile) noexcept {
  const auto& p = profile.params();
  const auto u = utilization_fractions(profile);
  PowerTerms t;
  t.gpu_kw = p.node_gpu_kw * u.gpu;
  t.non_gpu_kw = p.node_non_gpu_kw * u.non_gpu;
  t.node_kw = t.gpu_kw + t.non_gpu_kw;
  t.effective_kw = t.node_kw * p.pue;
  return t;
}

inline double effective_power_kw(const HardwareProfile& profile) noexcept {
  return power_terms(profile).effective_kw;
}

inline double cpu_effective_power_kw(const CpuProfile& cpu) noexcept {
  return cpu.core_power_kw * static_cast<double>(cpu.core_count) * cpu.pue;
}

namespace detail {
inline void require_duration(double duration_s) {
  if (!(duration_s >= 0) || !std::isfinite(duration_s)) {
    throw Error(Errc::invalid_measurement, "stage duration must be a finite value >= 0 s, got " +
                                               std::to_string(duration_s));
  }
}
}  // namespace detail

inline double llm_stage_energy_kwh(double duration_s, const HardwareProfile& profile) {
  detail::require_duration(duration_s);
  return duration_s / kSecondsPerHour * effective_power_kw(profile);
}

inline double throughput_duration_s(const ThroughputEstimate& est) {
  if (!(est.tokens_per_second > 0)) {
    throw Error(Errc::invalid_parameter, "tokens_per_second must be > 0");
  }
  if (!(est.output_length >= 0) || !(est.latency_s >= 0)) {
    throw Error(Errc::invalid_parameter, "output_length and latency must be >= 0");
  }
  return est.output_length / est.tokens_per_second + est.latency_s;
}

/// Raw throughput form: duration = output_length / TPS + latency.
inline double llm_stage_energy_from_throughput(const ThroughputEstimate& est, const HardwareProfile& profile) {
  return llm_stage_energy_kwh(throughput_duration_s(est), profile);
}

inline double cpu_stage_energy_kwh(double duration_s, const CpuProfile& cpu) {
  detail::require_duration(duration_s);
  return duration_s / kSecondsPerHour * cpu_effective_power_kw(cpu);
}

enum class GroundingMode { cpu_cosine, llm_check };

inline double hallucination_stage_energy_kwh(double duration_s, GroundingMode mode, const CpuProfile& cpu,
                                             const HardwareProfile& llm_profile) {
  return mode == GroundingMode::cpu_cosine ? cpu_stage_energy_kwh(duration_s, cpu)
                                           : llm_stage_energy_kwh(duration_s, llm_profile);
}

/// Folds per-stage energies into the three-term decomposition. Classification
/// calls are LLM inference and land in inference_kwh.
inline EnergyBreakdown total_query_energy(std::span<const std::pair<StageKind, double>> stage_energies) {
  EnergyBreakdown b;
  for (const auto& [kind, kwh] : stage_energies) {
    if (!(kwh >= 0)) throw Error(Errc::invalid_measurement, "stage energy must be >= 0");
    switch (kind) {
      case StageKind::retrieval: b.retrieval_kwh += kwh; break;
      case StageKind::classification:
      case StageKind::llm_inference: b.inference_kwh += kwh; break;
      case StageKind::hallucination_check: b.hallucination_kwh += kwh; break;
    }
  }
  b.total_kwh = b.retrieval_kwh + b.inference_kwh + b.hallucination_kwh;
  return b;
}

inline EnergyBreakdown total_query_energy(std::initializer_list<std::pair<StageKind, double>> stage_energies) {
  return total_query_energy(std::span<const std::pair<StageKind, double>>(stage_energies.begin(), stage_energies.size()));
}

inline HardwareProfile gpt4o_profile() {
  return HardwareProfile({"gpt-4o", 8, 8, 8, 0.6, 0.5, 5.6, 4.6, 1.12});
}

inline HardwareProfile gpt4o_mini_profile() {
  return HardwareProfile({"gpt-4o-mini", 4, 8, 8, 1.2, 0.5, 3.2, 3.3, 1.12});
}

/// Lookup key for model ids: lower-case with '-', '_', ' ' and '.' removed,
/// so "gpt4o-mini", "GPT 4o-Mini" and "gpt-4o-mini" all resolve alike.
inline std::string normalize_model_id(std::string_view id) {
  std::string out;
  for (char c : id) {
    if (c == '-' || c == '_' || c == ' ' || c == '.') continue;
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return out;
}

/// Binds model ids to hardware profiles, plus the single CPU profile used by
/// retrieval and cosine grounding.
class ProfileRegistry {
 public:
  ProfileRegistry() = default;

  static ProfileRegistry builtin() {
    ProfileRegistry r;
    r.add(gpt4o_profile());
    r.add(gpt4o_mini_profile());
    return r;
  }

  void add(HardwareProfile profile) {
    auto key = normalize_model_id(profile.model_id());
    profiles_.insert_or_assign(std::move(key), std::move(profile));
  }

  /// Makes `alias` resolve to the profile registered under `target`.
  void alias(std::string_view alias_id, std::string_view target) {
    aliases_[normalize_model_id(alias_id)] = normalize_model_id(target);
  }

  void set_cpu(CpuProfile cpu) {
    cpu.validate();
    cpu_ = cpu;
  }

  [[nodiscard]] const CpuProfile& cpu() const noexcept { return cpu_; }

  [[nodiscard]] bool contains(std::string_view model_id) const { return find(model_id) != nullptr; }

  [[nodiscard]] const HardwareProfile& llm(std::string_view model_id) const {
    if (const auto* p = find(model_id)) return *p;
    std::string available;
    for (const auto& id : ids()) available += (available.empty() ? "" : ", ") + id;
    throw Error(Errc::configuration,
                "no hardware profile for model '" + std::string(model_id) + "' (available: " + available + ")");
  }

  [[nodiscard]] std::vector<std::string> ids() const {
    std::vector<std::string> out;
    for (const auto& [key, profile] : profiles_) out.push_back(profile.model_id());
    return out;
  }

 private:
  [[nodiscard]] const HardwareProfile* find(std::string_view model_id) const {
    auto key = normalize_model_id(model_id);
    if (auto a = aliases_.find(key); a != aliases_.end()) key = a->second;
    auto it = profiles_.find(key);
    return it == profiles_.end() ? nullptr : &it->second;
  }

  std::map<std::string, HardwareProfile> profiles_;
  std::map<std::string, std::string> aliases_;
  CpuProfile cpu_;
};

/// Energy of one executed stage: LLM stages use the profile bound to the
/// stage's model, CPU stages use the registry's CPU profile.
inline double stage_energy_kwh(Executor executor, std::string_view model_id, double duration_s,
                               const ProfileRegistry& registry) {
  return executor == Executor::llm ? llm_stage_energy_kwh(duration_s, registry.llm(model_id))
                                   : cpu_stage_energy_kwh(duration_s, registry.cpu());
}

}  // namespace ragenergy
