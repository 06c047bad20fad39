#pragma once

#include "cxrssl/core/error.hpp"

#include <nlohmann/json.hpp>

#include <string>

namespace cxrssl {

enum class TokenMode { class_token, contrastive_token, none };
enum class PositionEmbedding { learnable, fixed_sinusoidal };

inline std::string to_string(TokenMode m) {
  switch (m) {
    case TokenMode::class_token: return "class_token";
    case TokenMode::contrastive_token: return "contrastive_token";
    case TokenMode::none: return "none";
  }
  return "none";
}

inline TokenMode parse_token_mode(const std::string& s) {
  if (s == "class_token") return TokenMode::class_token;
  if (s == "contrastive_token") return TokenMode::contrastive_token;
  if (s == "none") return TokenMode::none;
  throw InvalidArgument("unknown token mode '" + s + "'");
}

inline std::string to_string(PositionEmbedding p) {
  return p == PositionEmbedding::learnable ? "learnable" : "fixed_sinusoidal";
}

inline PositionEmbedding parse_position_embedding(const std::string& s) {
  if (s == "learnable") return PositionEmbedding::learnable;
  if (s == "fixed_sinusoidal") return PositionEmbedding::fixed_sinusoidal;
  throw InvalidArgument("unknown position embedding '" + s + "'");
}

struct PatchConfig {
  int patch_height = 16;
  int patch_width = 16;
  int hidden_dim = 384;
  int token_count = 256;
};

struct EncoderConfig {
  int depth = 12;
  int head_count = 6;
  int head_dim = 64;
  double mlp_ratio = 4.0;
  TokenMode token_mode = TokenMode::class_token;
  PositionEmbedding position_embedding = PositionEmbedding::learnable;

  int dim() const { return head_count * head_dim; }
  int mlp_hidden() const { return static_cast<int>(mlp_ratio * dim() + 0.5); }
};

// Full architecture description of the vision transformer.
struct ModelConfig {
  int image_height = 256;
  int image_width = 256;
  int channels = 1;
  int patch_height = 16;
  int patch_width = 16;
  int dim = 384;
  int depth = 12;
  int heads = 6;
  double mlp_ratio = 4.0;
  TokenMode token_mode = TokenMode::class_token;
  PositionEmbedding position_embedding = PositionEmbedding::learnable;

  // ViT-S/16 at 256x256 grayscale.
  static ModelConfig vit_s16() { return ModelConfig{}; }

  // Desk-scale model used by tests and the synthetic reproduction.
  static ModelConfig vit_tiny_test() {
    ModelConfig c;
    c.image_height = c.image_width = 32;
    c.patch_height = c.patch_width = 8;
    c.dim = 64;
    c.depth = 2;
    c.heads = 2;
    return c;
  }

  bool has_special_token() const { return token_mode != TokenMode::none; }
  int patch_count() const { return (image_height / patch_height) * (image_width / patch_width); }
  int sequence_length() const { return patch_count() + (has_special_token() ? 1 : 0); }
  int patch_dim() const { return patch_height * patch_width * channels; }
  int head_dim() const { return heads > 0 ? dim / heads : 0; }
  int mlp_hidden() const { return encoder().mlp_hidden(); }

  PatchConfig patch() const { return {patch_height, patch_width, dim, patch_count()}; }

  EncoderConfig encoder() const {
    return {depth, heads, head_dim(), mlp_ratio, token_mode, position_embedding};
  }

  void validate() const {
    if (image_height <= 0 || image_width <= 0 || channels < 1) {
      throw InvalidArgument("model: image dims must be positive");
    }
    if (patch_height <= 0 || patch_width <= 0 || image_height % patch_height != 0 ||
        image_width % patch_width != 0) {
      throw DimensionMismatch("model: image " + std::to_string(image_height) + "x" +
                              std::to_string(image_width) + " not divisible by patch " +
                              std::to_string(patch_height) + "x" + std::to_string(patch_width));
    }
    if (depth < 0 || heads <= 0 || dim <= 0 || dim % heads != 0) {
      throw InvalidArgument("model: dim must equal heads * head_dim");
    }
    if (!(mlp_ratio > 0)) throw InvalidArgument("model: mlp_ratio must be positive");
  }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"image_height", c.image_height},
                     {"image_width", c.image_width},
                     {"channels", c.channels},
                     {"patch_height", c.patch_height},
                     {"patch_width", c.patch_width},
                     {"dim", c.dim},
                     {"depth", c.depth},
                     {"heads", c.heads},
                     {"mlp_ratio", c.mlp_ratio},
                     {"token_mode", to_string(c.token_mode)},
                     {"position_embedding", to_string(c.position_embedding)}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.image_height = j.at("image_height").get<int>();
  c.image_width = j.at("image_width").get<int>();
  c.channels = j.at("channels").get<int>();
  c.patch_height = j.at("patch_height").get<int>();
  c.patch_width = j.at("patch_width").get<int>();
  c.dim = j.at("dim").get<int>();
  c.depth = j.at("depth").get<int>();
  c.heads = j.at("heads").get<int>();
  c.mlp_ratio = j.at("mlp_ratio").get<double>();
  c.token_mode = parse_token_mode(j.at("token_mode").get<std::string>());
  c.position_embedding = parse_position_embedding(j.at("position_embedding").get<std::string>());
}

}  // namespace cxrssl
