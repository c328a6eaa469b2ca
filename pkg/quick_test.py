import json

from app.services.theorem_service import TheoremService

# Smoke test: the circle counterexample on 64 vertices
bundle = TheoremService().counterexample_circle(64)
im_v, v_error = bundle.v_error

print("Winding:", bundle.phase.windings[0].winding)
print("max |Im V|:", im_v)
print("max |V + 1|:", v_error)
print("Kernel residual:", bundle.kernel_residual)
print("\nPhase report:")
print(json.dumps(bundle.phase.model_dump(exclude={"obstruction": {"vertices"}}), indent=2))
