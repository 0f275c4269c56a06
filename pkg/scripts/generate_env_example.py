#!/usr/bin/env python3
"""
Generate .env.example from the Settings class

Every field of nlkw_lab.core.entities.Settings maps to an environment
variable NLKW_<FIELD_NAME>, read by nlkw_lab.repositories.config.
"""

from pathlib import Path
from typing import Any, List, Tuple

from pydantic.fields import FieldInfo
from pydantic_core import PydanticUndefined

from nlkw_lab.core.entities import Settings

ENV_PREFIX = "NLKW_"


def _extract_default_value(field_info: FieldInfo) -> Any:
    """Extract default value from field info"""
    if field_info.default is not PydanticUndefined:
        return field_info.default
    if field_info.default_factory is not None:
        return field_info.default_factory()  # type: ignore[call-arg]
    return None


def extract_env_variables_from_settings() -> List[Tuple[str, Any, str]]:
    """(variable name, default, comment) of every Settings field"""
    env_vars = []
    for field_name, field_info in Settings.model_fields.items():
        env_name = ENV_PREFIX + field_name.upper()
        default_value = _extract_default_value(field_info)
        description = field_info.description or f"{field_name} configuration"
        comment = f"Optional: {description}."
        if default_value is not None:
            comment += f" Defaults to {default_value}."
        env_vars.append((env_name, default_value, comment))
    return env_vars


def _format_env_value(default_value: Any) -> str:
    if default_value is None:
        return ""
    if isinstance(default_value, bool):
        return str(default_value).lower()
    return str(default_value)


def generate_env_example(env_vars: List[Tuple[str, Any, str]], output_path: Path):
    """Generate .env.example from environment variables"""
    lines = ["# .env.example - nlkw_lab configuration", ""]
    for var_name, default_value, comment in env_vars:
        lines.append(f"# {comment}")
        lines.append(f"{var_name}={_format_env_value(default_value)}")
        lines.append("")

    with open(output_path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines))


def main():
    """Main function"""
    project_root = Path(__file__).parent.parent
    env_example_file = project_root / ".env.example"

    env_vars = extract_env_variables_from_settings()
    if not env_vars:
        print("Warning: No environment variables found in Settings class")
        return 1

    generate_env_example(env_vars, env_example_file)
    print(f"Successfully generated {env_example_file}")
    for var_name, default_value, _ in env_vars:
        print(f"  - {var_name} (default: {default_value})")
    return 0


if __name__ == "__main__":
    exit(main())
