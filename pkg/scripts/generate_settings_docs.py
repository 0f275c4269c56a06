#!/usr/bin/env python3
"""
Generate docs/settings.md from the command-line arguments of nlkw.

Arguments are read from nlkw_lab/adapters/cli.py with AST, environment
variables from the Settings model.
"""

import ast
import sys
from pathlib import Path
from typing import Any, Dict, List, Tuple

sys.path.insert(0, str(Path(__file__).parent.parent))

from pydantic_core import PydanticUndefined  # noqa: E402

from nlkw_lab.core.entities import Settings  # noqa: E402

ENV_PREFIX = "NLKW_"
CLI_PATH = Path(__file__).parent.parent / "nlkw_lab" / "adapters" / "cli.py"


class ArgParseVisitor(ast.NodeVisitor):
    """AST visitor to extract the shared subcommand arguments"""

    def __init__(self):
        self.arguments: List[Dict[str, Any]] = []
        self.in_common = False

    def visit_FunctionDef(self, node):
        if node.name == "_add_common_arguments":
            self.in_common = True
            self.generic_visit(node)
            self.in_common = False

    def visit_Call(self, node):
        if (
            self.in_common
            and isinstance(node.func, ast.Attribute)
            and node.func.attr == "add_argument"
        ):
            names = [a.value for a in node.args if isinstance(a, ast.Constant)]
            if names:
                arg: Dict[str, Any] = {"names": names}
                for keyword in node.keywords:
                    if keyword.arg == "help" and isinstance(keyword.value, ast.Constant):
                        arg["help"] = keyword.value.value
                    elif keyword.arg == "type" and isinstance(keyword.value, ast.Name):
                        arg["type"] = keyword.value.id
                    elif keyword.arg == "choices" and isinstance(
                        keyword.value, ast.Tuple
                    ):
                        arg["choices"] = [
                            e.value
                            for e in keyword.value.elts
                            if isinstance(e, ast.Constant)
                        ]
                self.arguments.append(arg)
        self.generic_visit(node)


class EnvMappingVisitor(ast.NodeVisitor):
    """AST visitor to extract argument to environment variable mappings"""

    def __init__(self):
        self.env_mappings: Dict[str, str] = {}
        self.in_apply_args = False

    def visit_FunctionDef(self, node):
        if node.name == "apply_args_to_env":
            self.in_apply_args = True
            self.generic_visit(node)
            self.in_apply_args = False

    def visit_If(self, node):
        if self.in_apply_args:
            arg_name = _tested_attribute(node.test)
            for stmt in node.body:
                if (
                    arg_name
                    and isinstance(stmt, ast.Assign)
                    and isinstance(stmt.targets[0], ast.Subscript)
                    and isinstance(stmt.targets[0].slice, ast.Constant)
                ):
                    self.env_mappings[arg_name] = stmt.targets[0].slice.value
        self.generic_visit(node)


def _tested_attribute(test: ast.expr) -> str:
    """Name of args.<name> in `if args.<name>` or `if args.<name> is not None`"""
    if isinstance(test, ast.Compare):
        test = test.left
    if (
        isinstance(test, ast.Attribute)
        and isinstance(test.value, ast.Name)
        and test.value.id == "args"
    ):
        return test.attr
    return ""


def parse_cli() -> Tuple[List[Dict[str, Any]], Dict[str, str]]:
    """Parse cli.py and extract argument information"""
    with open(CLI_PATH, "r", encoding="utf-8") as f:
        tree = ast.parse(f.read())
    arg_visitor = ArgParseVisitor()
    arg_visitor.visit(tree)
    env_visitor = EnvMappingVisitor()
    env_visitor.visit(tree)
    return arg_visitor.arguments, env_visitor.env_mappings


def get_env_var_info() -> Dict[str, Dict[str, Any]]:
    """Environment variables of the Settings model"""
    env_vars = {}
    for field_name, field_info in Settings.model_fields.items():
        default = field_info.default
        if default is PydanticUndefined:
            default = "..."
        annotation = field_info.annotation
        env_vars[ENV_PREFIX + field_name.upper()] = {
            "default": default,
            "type": getattr(annotation, "__name__", str(annotation)),
            "description": field_info.description or "",
        }
    return env_vars


def generate_documentation(
    arguments: List[Dict[str, Any]],
    env_mappings: Dict[str, str],
    env_var_info: Dict[str, Dict[str, Any]],
) -> str:
    """Generate markdown documentation"""
    lines = [
        "# nlkw Settings",
        "",
        "This document describes the arguments shared by every `nlkw` subcommand",
        "and the environment variables read by nlkw_lab.",
        "",
        "## Priority",
        "",
        "Command-line flags override the JSON config file (`--config`) and environment variables.",
        "Environment variables may also be set in a `.env` file in the working directory.",
        "",
        "## Arguments",
        "",
    ]

    for arg in arguments:
        main_name = arg["names"][0]
        arg_key = main_name.lstrip("-").replace("-", "_")
        lines.append(f"### {main_name}")
        lines.append("")
        if "help" in arg:
            lines.append(f"**Description**: {arg['help']}")
            lines.append("")
        if "type" in arg:
            lines.append(f"**Type**: `{arg['type']}`")
            lines.append("")
        if "choices" in arg:
            choices = ", ".join(f"`{c}`" for c in arg["choices"])
            lines.append(f"**Choices**: {choices}")
            lines.append("")
        env_var = env_mappings.get(arg_key)
        if env_var:
            lines.append(f"**Environment Variable**: `{env_var}`")
            default = env_var_info.get(env_var, {}).get("default")
            if default is not None:
                lines.append(f"  - Default: `{default}`")
            lines.append("")

    lines.extend(
        [
            "## Environment Variables Reference",
            "",
            "| Variable | Description | Type | Default |",
            "| --- | --- | --- | --- |",
        ]
    )
    for env_var in sorted(env_var_info):
        info = env_var_info[env_var]
        default = info["default"]
        if default == "...":
            default = "Required"
        lines.append(
            f"| `{env_var}` | {info['description']} | {info['type']} | `{default}` |"
        )
    lines.append("")
    return "\n".join(lines)


def main():
    """Main function"""
    arguments, env_mappings = parse_cli()
    print(f"Found {len(arguments)} arguments")
    env_var_info = get_env_var_info()
    print(f"Found {len(env_var_info)} environment variables")

    documentation = generate_documentation(arguments, env_mappings, env_var_info)
    docs_dir = Path(__file__).parent.parent / "docs"
    docs_dir.mkdir(exist_ok=True)
    output_path = docs_dir / "settings.md"
    with open(output_path, "w", encoding="utf-8") as f:
        f.write(documentation)
    print(f"Documentation generated successfully: {output_path}")


if __name__ == "__main__":
    main()
