#include "respond/context.hpp"

namespace respond {

Frame make_frame(const Scene& scene, const EncoderParams& params) {
  Encoding enc = encode_scene(scene, params);
  return {scene, enc.pattern, flatten(enc.pattern), enc.risks};
}

DecisionContext make_context(const Frame& frame, std::optional<std::string> profile, AblationFlags flags) {
  DecisionContext ctx;
  ctx.scene = frame.scene;
  ctx.pattern = frame.pattern;
  ctx.vector = frame.vector;
  ctx.risks = frame.risks;
  ctx.profile = std::move(profile);
  ctx.flags = flags;
  return ctx;
}

DecisionContext make_context(const Scene& scene, const EncoderParams& params, std::optional<std::string> profile,
                             AblationFlags flags) {
  return make_context(make_frame(scene, params), std::move(profile), flags);
}

double mean_surrounding_speed(const Scene& scene) {
  double sum = 0.0;
  int n = 0;
  for (const auto& o : scene.others) {
    if (row_of(o.x - scene.ego.x) < 0) continue;
    sum += o.vx;
    ++n;
  }
  return n == 0 ? scene.ego.vx : sum / n;
}

}  // namespace respond
