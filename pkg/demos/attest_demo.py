"""Attestation-based access.

    python3 demos/attest_demo.py

A certifier endorses image properties, the cloud provider attests which
image each client instance runs, and an object's ACL lists the properties it
accepts.  Access is granted when an attested property appears on the ACL.
"""
from safetrust.apps import World
from safetrust.apps.attest import Attestation


def main():
    w = World(3)
    a = Attestation(w)
    owner, guard = w.principal("owner"), w.principal("guard")
    obj = a.create_object(owner, ["fips-140", "patched-2024", "sgx"])
    a.endorse("web-v1", ["nginx", "patched-2024"])
    a.endorse("legacy", ["nginx", "unpatched"])
    print(f"object {obj[-12:]} accepts fips-140, patched-2024, sgx")
    cases = [("vm-a", "web-v1"), ("vm-b", "legacy")]
    for client, image in cases:
        cid = w.principal(client).pid
        res = a.check_access(guard, cid, obj, a.attest(cid, image))
        why = "" if res.allowed else f" ({res.diagnostics['reason']})"
        print(f"  {client} running {image:<7} {'allow' if res.allowed else 'deny'}{why}"
              f"  steps={res.diagnostics['steps']}")
    # a bearer attesting someone else proves nothing about this client
    stranger = w.principal("vm-c").pid
    res = a.check_access(guard, stranger, obj, a.attest("vm-d", "web-v1"))
    print(f"  vm-c with vm-d's attestation {'allow' if res.allowed else 'deny'} "
          f"({res.diagnostics.get('reason')})")


if __name__ == "__main__":
    main()
