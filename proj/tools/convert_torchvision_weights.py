#!/usr/bin/env python3
"""Convert torchvision / timm backbone weights into a streetcam weights file.

The output is a torch.save()d {name: tensor} dict whose names match the
streetcam backbone parameters, loadable with `streetcam train --weights`.

    convert_torchvision_weights.py resnet50 out.pt              # torchvision, downloads
    convert_torchvision_weights.py vit_b_16 out.pt
    convert_torchvision_weights.py --state-dict deit_small.pth deit out.pt
"""
import argparse
import re
import sys

import torch


def resnet_names(state):
    return {k: v for k, v in state.items() if not k.startswith("fc.")}


VIT_RULES = [
    # torchvision VisionTransformer
    (r"^conv_proj\.(.*)$", r"conv_proj.\1"),
    (r"^class_token$", "class_token"),
    (r"^encoder\.pos_embedding$", "pos_embedding"),
    (r"^encoder\.layers\.encoder_layer_(\d+)\.ln_([12])\.(.*)$", r"blocks.\1.ln_\2.\3"),
    (r"^encoder\.layers\.encoder_layer_(\d+)\.self_attention\.in_proj_(weight|bias)$", r"blocks.\1.in_proj.\2"),
    (r"^encoder\.layers\.encoder_layer_(\d+)\.self_attention\.out_proj\.(.*)$", r"blocks.\1.out_proj.\2"),
    (r"^encoder\.layers\.encoder_layer_(\d+)\.mlp\.(?:0|linear_1)\.(.*)$", r"blocks.\1.mlp_1.\2"),
    (r"^encoder\.layers\.encoder_layer_(\d+)\.mlp\.(?:3|linear_2)\.(.*)$", r"blocks.\1.mlp_2.\2"),
    (r"^encoder\.ln\.(.*)$", r"ln.\1"),
    # timm VisionTransformer / DeiT
    (r"^patch_embed\.proj\.(.*)$", r"conv_proj.\1"),
    (r"^cls_token$", "class_token"),
    (r"^pos_embed$", "pos_embedding"),
    (r"^blocks\.(\d+)\.norm([12])\.(.*)$", r"blocks.\1.ln_\2.\3"),
    (r"^blocks\.(\d+)\.attn\.qkv\.(.*)$", r"blocks.\1.in_proj.\2"),
    (r"^blocks\.(\d+)\.attn\.proj\.(.*)$", r"blocks.\1.out_proj.\2"),
    (r"^blocks\.(\d+)\.mlp\.fc1\.(.*)$", r"blocks.\1.mlp_1.\2"),
    (r"^blocks\.(\d+)\.mlp\.fc2\.(.*)$", r"blocks.\1.mlp_2.\2"),
    (r"^norm\.(.*)$", r"ln.\1"),
]


def vit_names(state):
    out = {}
    for key, value in state.items():
        for pattern, target in VIT_RULES:
            if re.match(pattern, key):
                out[re.sub(pattern, target, key)] = value
                break
    return out


def load_state(arch, state_dict_path):
    if state_dict_path:
        state = torch.load(state_dict_path, map_location="cpu")
        return state.get("model", state)
    import torchvision

    weights = "DEFAULT"
    model = getattr(torchvision.models, arch)(weights=weights)
    return model.state_dict()


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("arch", help="resnet18/34/50/101/152, vit_*, or deit")
    parser.add_argument("output")
    parser.add_argument("--state-dict", help="read this checkpoint instead of downloading")
    args = parser.parse_args(argv)

    state = load_state(args.arch, args.state_dict)
    converted = resnet_names(state) if args.arch.startswith("resnet") else vit_names(state)
    if not converted:
        sys.exit("no tensors matched the expected naming scheme")
    torch.save({k: v.detach().clone().contiguous() for k, v in converted.items()}, args.output)
    print(f"wrote {len(converted)} tensors to {args.output}")


if __name__ == "__main__":
    main()
