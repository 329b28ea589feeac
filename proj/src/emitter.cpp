#include <photonbench/emitter.hpp>

#include <algorithm>
#include <cmath>

namespace photonbench::emitter {

std::string to_string(ChargeState state) {
  return state == ChargeState::NVminus ? "NVminus" : "NVzero";
}

ChargeState charge_state_from_string(const std::string &name) {
  if (name == "NVminus")
    return ChargeState::NVminus;
  if (name == "NVzero")
    return ChargeState::NVzero;
  throw ValidationError("unknown charge state '" + name + "'", "charge_state");
}

EmitterSpec make_emitter(ChargeState state, Vec3 position) {
  EmitterSpec e;
  e.position = position;
  e.charge_state = state;
  if (state == ChargeState::NVminus) {
    e.lifetime_ns = 12.0;
    e.zpl_wavelength_nm = 638.0;
  } else {
    e.lifetime_ns = 21.0;
    e.zpl_wavelength_nm = 575.0;
  }
  return e;
}

void validate(const EmitterSpec &e) {
  if (!(e.lifetime_ns > 0.0))
    throw ValidationError("emitter lifetime must be positive", "lifetime");
  if (!(e.zpl_weight >= 0.0 && e.zpl_weight <= 1.0))
    throw ValidationError("zpl_weight must lie in [0, 1]", "zpl_weight");
  if (!(e.sideband_width_nm > 0.0))
    throw ValidationError("sideband width must be positive", "sideband_width");
  if (!(e.saturation_rate >= 0.0))
    throw ValidationError("saturation_rate must be non-negative", "saturation_rate");
}

namespace {

double xy_distance(const Vec2 &a, const Vec2 &b) { return std::hypot(a.x - b.x, a.y - b.y); }

void validate(const SampleSpec &spec) {
  if (!(spec.field_size.x > 0.0 && spec.field_size.y > 0.0))
    throw ValidationError("field_size must be positive", "field_size");
  if (!(spec.target_density >= 0.0))
    throw ValidationError("target_density must be non-negative", "target_density");
  if (!(spec.min_spacing >= 0.0) ||
      spec.min_spacing >= std::min(spec.field_size.x, spec.field_size.y) / 2.0)
    throw ValidationError("min_spacing must be below half the field edge", "min_spacing");
  if (!(spec.fraction_single >= 0.0 && spec.fraction_single <= 1.0))
    throw ValidationError("fraction_single must lie in [0, 1]", "fraction_single");
  if (!(spec.charge_state_mix >= 0.0 && spec.charge_state_mix <= 1.0))
    throw ValidationError("charge_state_mix must lie in [0, 1]", "charge_state_mix");
}

} // namespace

SampleField generate_sample(const SampleSpec &spec) {
  validate(spec);
  SampleField field;
  field.spec = spec;

  const double area = spec.field_size.x * spec.field_size.y;
  const auto target = static_cast<std::size_t>(std::llround(spec.target_density * area / 100.0));
  Rng rng(spec.rng_seed);
  std::uniform_real_distribution<double> ux(0.0, spec.field_size.x);
  std::uniform_real_distribution<double> uy(0.0, spec.field_size.y);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  std::vector<Vec2> sites;
  sites.reserve(target);
  for (std::size_t n = 0; n < target; ++n) {
    bool placed = false;
    for (int attempt = 0; attempt < kPlacementRetries && !placed; ++attempt) {
      const Vec2 candidate{ux(rng), uy(rng)};
      placed = std::all_of(sites.begin(), sites.end(), [&](const Vec2 &s) {
        return xy_distance(s, candidate) >= spec.min_spacing;
      });
      if (placed)
        sites.push_back(candidate);
    }
    if (!placed)
      break;
  }

  if (static_cast<double>(sites.size()) < kMinFillFraction * static_cast<double>(target)) {
    throw InfeasibleError("sample infeasible: placed " + std::to_string(sites.size()) + " of " +
                          std::to_string(target) + " diamonds with min_spacing " +
                          std::to_string(spec.min_spacing) + " µm after " +
                          std::to_string(kPlacementRetries) + " attempts");
  }

  for (const Vec2 &site : sites) {
    int nv_count = 1;
    if (unit(rng) >= spec.fraction_single)
      nv_count = unit(rng) < 0.5 ? 2 : 3;
    for (int k = 0; k < nv_count; ++k) {
      const auto state =
          unit(rng) < spec.charge_state_mix ? ChargeState::NVminus : ChargeState::NVzero;
      field.emitters.push_back(make_emitter(state, {site.x, site.y, 0.0}));
    }
  }
  field.achieved_density = static_cast<double>(sites.size()) / area * 100.0;
  return field;
}

std::vector<Vec2> distinct_sites(const SampleField &field) {
  std::vector<Vec2> sites;
  for (const auto &e : field.emitters) {
    const Vec2 p{e.position.x, e.position.y};
    if (std::none_of(sites.begin(), sites.end(), [&](const Vec2 &s) { return s == p; }))
      sites.push_back(p);
  }
  return sites;
}

double next_emission_interval(const EmitterSpec &emitter, double excitation_rate, Rng &rng) {
  if (!(excitation_rate >= 0.0))
    throw ValidationError("excitation rate must be non-negative", "excitation_rate");
  validate(emitter);
  if (excitation_rate == 0.0)
    return std::numeric_limits<double>::infinity();
  std::exponential_distribution<double> wait(excitation_rate / kNsPerSecond);
  std::exponential_distribution<double> decay(1.0 / emitter.lifetime_ns);
  return wait(rng) + decay(rng);
}

double renewal_rate(double excitation_rate, double decay_rate) {
  if (excitation_rate <= 0.0)
    return 0.0;
  return excitation_rate * decay_rate / (excitation_rate + decay_rate);
}

double excitation_for_emission_rate(double emission_rate, double decay_rate) {
  if (emission_rate >= decay_rate)
    throw ValidationError("emission rate exceeds the radiative ceiling 1/lifetime",
                          "saturation_rate");
  return emission_rate * decay_rate / (decay_rate - emission_rate);
}

double sample_wavelength(const EmitterSpec &emitter, Rng &rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  if (unit(rng) < emitter.zpl_weight) {
    std::normal_distribution<double> line(emitter.zpl_wavelength_nm, kZplSigmaNm);
    for (;;) {
      const double w = line(rng);
      if (std::abs(w - emitter.zpl_wavelength_nm) <= kZplTruncationNm)
        return w;
    }
  }
  std::normal_distribution<double> sideband(emitter.sideband_center_nm, emitter.sideband_width_nm);
  for (;;) {
    const double w = sideband(rng);
    if (w >= kSpectrumMinNm && w <= kSpectrumMaxNm)
      return w;
  }
}

std::vector<SpectralNode> spectral_quadrature(const EmitterSpec &emitter) {
  std::vector<SpectralNode> nodes;
  nodes.reserve(kSidebandNodes + 1);
  if (emitter.zpl_weight > 0.0)
    nodes.push_back({emitter.zpl_wavelength_nm, emitter.zpl_weight});

  const double step = (kSpectrumMaxNm - kSpectrumMinNm) / kSidebandNodes;
  std::vector<double> density(kSidebandNodes);
  double total = 0.0;
  for (int i = 0; i < kSidebandNodes; ++i) {
    const double w = kSpectrumMinNm + (i + 0.5) * step;
    const double u = (w - emitter.sideband_center_nm) / emitter.sideband_width_nm;
    density[i] = std::exp(-0.5 * u * u);
    total += density[i];
  }
  const double sideband_weight = 1.0 - emitter.zpl_weight;
  if (sideband_weight > 0.0 && total > 0.0) {
    for (int i = 0; i < kSidebandNodes; ++i)
      nodes.push_back({kSpectrumMinNm + (i + 0.5) * step, sideband_weight * density[i] / total});
  }
  return nodes;
}

RenewalEmitter::RenewalEmitter(double excitation_rate, double decay_rate)
    : excitation_rate_(excitation_rate), decay_rate_(decay_rate) {
  if (!(excitation_rate >= 0.0) || !(decay_rate > 0.0))
    throw ValidationError("renewal emitter needs non-negative excitation and positive decay");
}

double RenewalEmitter::draw_interval_ps(Rng &rng) {
  if (excitation_rate_ <= 0.0)
    return std::numeric_limits<double>::infinity();
  std::exponential_distribution<double> wait(excitation_rate_ / kPsPerSecond);
  std::exponential_distribution<double> decay(decay_rate_ / kPsPerSecond);
  return wait(rng) + decay(rng);
}

void RenewalEmitter::emit(double begin_ps, double end_ps, double keep_probability, Rng &rng,
                          std::vector<double> &out) {
  if (std::isnan(next_ps_) || std::isinf(next_ps_))
    next_ps_ = begin_ps + draw_interval_ps(rng);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  while (next_ps_ < end_ps) {
    if (keep_probability >= 1.0 || unit(rng) < keep_probability)
      out.push_back(next_ps_);
    next_ps_ += draw_interval_ps(rng);
  }
}

nlohmann::json to_json(const EmitterSpec &e) {
  return {{"position", {e.position.x, e.position.y, e.position.z}},
          {"charge_state", to_string(e.charge_state)},
          {"lifetime_ns", e.lifetime_ns},
          {"saturation_rate", e.saturation_rate},
          {"zpl_wavelength_nm", e.zpl_wavelength_nm},
          {"sideband_center_nm", e.sideband_center_nm},
          {"sideband_width_nm", e.sideband_width_nm},
          {"zpl_weight", e.zpl_weight}};
}

EmitterSpec emitter_from_json(const nlohmann::json &j) {
  EmitterSpec e = make_emitter(charge_state_from_string(j.value("charge_state", "NVminus")));
  const auto &p = j.at("position");
  e.position = {p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>()};
  e.lifetime_ns = j.value("lifetime_ns", e.lifetime_ns);
  e.saturation_rate = j.value("saturation_rate", e.saturation_rate);
  e.zpl_wavelength_nm = j.value("zpl_wavelength_nm", e.zpl_wavelength_nm);
  e.sideband_center_nm = j.value("sideband_center_nm", e.sideband_center_nm);
  e.sideband_width_nm = j.value("sideband_width_nm", e.sideband_width_nm);
  e.zpl_weight = j.value("zpl_weight", e.zpl_weight);
  validate(e);
  return e;
}

nlohmann::json to_json(const SampleSpec &s) {
  return {{"field_size", {s.field_size.x, s.field_size.y}},
          {"target_density", s.target_density},
          {"min_spacing", s.min_spacing},
          {"fraction_single", s.fraction_single},
          {"charge_state_mix", s.charge_state_mix},
          {"rng_seed", s.rng_seed}};
}

SampleSpec sample_spec_from_json(const nlohmann::json &j) {
  SampleSpec s;
  if (j.contains("field_size"))
    s.field_size = {j["field_size"].at(0).get<double>(), j["field_size"].at(1).get<double>()};
  s.target_density = j.value("target_density", s.target_density);
  s.min_spacing = j.value("min_spacing", s.min_spacing);
  s.fraction_single = j.value("fraction_single", s.fraction_single);
  s.charge_state_mix = j.value("charge_state_mix", s.charge_state_mix);
  s.rng_seed = j.value("rng_seed", s.rng_seed);
  return s;
}

nlohmann::json to_json(const SampleField &field) {
  nlohmann::json emitters = nlohmann::json::array();
  for (const auto &e : field.emitters)
    emitters.push_back(to_json(e));
  return {{"schema", kSampleSchema},
          {"spec", to_json(field.spec)},
          {"achieved_density", field.achieved_density},
          {"emitters", std::move(emitters)}};
}

SampleField sample_field_from_json(const nlohmann::json &j) {
  if (j.value("schema", std::string{}) != kSampleSchema)
    throw ValidationError(std::string("expected schema ") + kSampleSchema, "schema");
  SampleField field;
  field.spec = sample_spec_from_json(j.at("spec"));
  field.achieved_density = j.at("achieved_density").get<double>();
  for (const auto &e : j.at("emitters"))
    field.emitters.push_back(emitter_from_json(e));
  return field;
}

} // namespace photonbench::emitter
